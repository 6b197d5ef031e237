"""Checkpoint and flat config file I/O.

Checkpoint format (stable, documented in the README): a UTF-8 text file
whose first line is ``tensormap 1``, second line the entry count, then
one line per tensor::

    <name> <d0>x<d1>x...| v0 v1 v2 ...

Values are printed with %.17g, which round-trips IEEE-754 doubles
exactly. Scalars use the dimension string ``-``. Names are sorted on
save so files are byte-stable for equal content.

Config files are flat ``key = value`` text with ``#`` comments.
"""

from __future__ import annotations

import os
from typing import Mapping

import numpy as np

from .autodiff import Tensor

MAGIC = "tensormap 1"


class CheckpointError(ValueError):
    """Malformed checkpoint or config file."""


def save_checkpoint(path: str | os.PathLike, tensors: Mapping[str, Tensor | np.ndarray]) -> None:
    lines = [MAGIC, str(len(tensors))]
    for name in sorted(tensors):
        if any(c.isspace() for c in name):
            raise CheckpointError(f"tensor name {name!r} contains whitespace")
        arr = tensors[name]
        data = arr.data if isinstance(arr, Tensor) else np.asarray(arr, dtype=np.float64)
        dims = "x".join(str(d) for d in data.shape) if data.shape else "-"
        values = " ".join("%.17g" % v for v in data.reshape(-1))
        lines.append(f"{name} {dims}| {values}".rstrip())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MAGIC:
        raise CheckpointError(f"{path}: not a tensormap file")
    try:
        count = int(lines[1])
    except (IndexError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad entry count") from exc
    entries = [ln for ln in lines[2:] if ln.strip()]
    if len(entries) != count:
        raise CheckpointError(f"{path}: expected {count} entries, found {len(entries)}")
    out: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(entries, start=3):
        head, sep, values = line.partition("|")
        if not sep:
            raise CheckpointError(f"{path}:{lineno}: missing '|' separator")
        parts = head.split()
        if len(parts) != 2:
            raise CheckpointError(f"{path}:{lineno}: expected '<name> <dims>|'")
        name, dims = parts
        shape = () if dims == "-" else tuple(int(d) for d in dims.split("x"))
        try:
            flat = np.array(values.split(), dtype=np.float64)
        except ValueError as exc:
            raise CheckpointError(f"{path}:{lineno}: bad float value") from exc
        expected = int(np.prod(shape)) if shape else 1
        if flat.size != expected:
            raise CheckpointError(
                f"{path}:{lineno}: tensor {name!r} has {flat.size} values, expected {expected}")
        out[name] = flat.reshape(shape)
    return out


def checkpoint_tensors(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Snapshot parameter data as plain arrays (for best-so-far copies)."""
    return {name: p.data.copy() for name, p in params.items()}


def save_kv(path: str | os.PathLike, values: Mapping[str, object]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in values:
            fh.write(f"{key} = {values[key]}\n")


def load_kv(path: str | os.PathLike) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CheckpointError(f"{path}:{lineno}: expected 'key = value'")
            out[key.strip()] = value.strip()
    return out
