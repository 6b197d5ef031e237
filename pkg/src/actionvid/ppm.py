"""Binary PPM (P6) and raw RGB stream I/O.

PPM is used for all stored frames because it round-trips 8-bit RGB
bit-exactly with zero dependencies. The raw stream is a single file:
16-byte header (magic ``AGVD``, then uint32 little-endian T, H, W)
followed by T*H*W*3 bytes of RGB.
"""

from __future__ import annotations

import struct

import numpy as np

RAW_MAGIC = b"AGVD"


class ImageFormatError(ValueError):
    pass


def write_ppm(path, image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ImageFormatError(f"write_ppm: need uint8 (H, W, 3), got {image.dtype} {image.shape}")
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise ImageFormatError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    pixels = data[pos:pos + w * h * 3]
    if len(pixels) != w * h * 3:
        raise ImageFormatError(f"{path}: truncated pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3).copy()


def write_raw_stream(path, frames: np.ndarray) -> None:
    """Write uint8 (T, H, W, 3) frames as one headered RGB stream."""
    if frames.ndim != 4 or frames.shape[3] != 3 or frames.dtype != np.uint8:
        raise ImageFormatError(f"write_raw_stream: need uint8 (T, H, W, 3), got {frames.shape}")
    t, h, w, _ = frames.shape
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC + struct.pack("<III", t, h, w))
        fh.write(frames.tobytes())


def read_raw_stream(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != RAW_MAGIC:
            raise ImageFormatError(f"{path}: missing raw stream header")
        t, h, w = struct.unpack("<III", header[4:])
        body = fh.read(t * h * w * 3)
    if len(body) != t * h * w * 3:
        raise ImageFormatError(f"{path}: truncated raw stream")
    return np.frombuffer(body, dtype=np.uint8).reshape(t, h, w, 3).copy()
