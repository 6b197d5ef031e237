"""Dense float64 tensors with reverse-mode automatic differentiation.

The op set is deliberately closed: matmul, add, multiply, concat (last
axis), relu, sigmoid, tanh, sum, mean, abs, embedding lookup, 3x3
stride-1 zero-padded 2-D convolution, and bilinear grid sampling. Every
model in this package is expressed in these primitives, which keeps the
finite-difference gradient suite exhaustive.

Tensors are eager: each op computes its value immediately and records
its parents plus a backward closure, so the computation graph is the
(acyclic, topologically ordered by construction) chain of tensors that
produced a value. ``backward(loss)`` walks that chain once per node and
accumulates d(loss)/d(tensor) into ``.grad`` buffers; gradients keep
accumulating across calls until ``zero_grad`` / ``Adam.zero_grad``.

Everything is float64 and single-threaded per graph; separate graphs
share nothing and may run on concurrent workers.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested op."""


class NumericError(ArithmeticError):
    """An op produced NaN or Inf."""


class GraphError(RuntimeError):
    """Backward called on something that is not a scalar op result."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A dense float64 array plus the bookkeeping for reverse mode.

    ``grad`` is lazily allocated: it stays None until a backward pass
    first reaches the tensor (a None grad means "no contribution yet"
    and is treated as zero by ``zero_grad``).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # Operator sugar; everything routes through the closed op set.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return multiply(self, -1.0)

    def __sub__(self, other):
        return add(self, multiply(other, -1.0))

    def __rsub__(self, other):
        return add(multiply(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(op: str, out: np.ndarray) -> None:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{op}: output contains NaN or Inf")


class _quiet(np.errstate):
    """Overflow/invalid intermediates surface as NumericError via the
    finite check, not as numpy warnings."""

    def __init__(self):
        super().__init__(over="ignore", invalid="ignore", divide="ignore")


def _make(op: str, out: np.ndarray, parents: Sequence[Tensor],
          backward_fn: Callable[[np.ndarray], None] | None) -> Tensor:
    _check_finite(op, out)
    t = Tensor(out)
    t._op = op
    if any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward_fn = backward_fn
    return t


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product of the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    try:
        with _quiet():
            out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}") from exc

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.matmul(g, _swap_last(b.data)), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.matmul(_swap_last(a.data), g), b.shape))

    return _make("matmul", out, (a, b), backward_fn)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        with _quiet():
            out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make("add", out, (a, b), backward_fn)


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        with _quiet():
            out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"multiply: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make("multiply", out, (a, b), backward_fn)


def concat(tensors: Iterable) -> Tensor:
    """Concatenate along the last axis."""
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat: needs at least one tensor")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(
                f"concat: leading dims differ, {parts[0].shape} vs {p.shape}")
    out = np.concatenate([p.data for p in parts], axis=-1)
    sizes = [p.shape[-1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[..., lo:hi])

    return _make("concat", out, parts, backward_fn)


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, g * (x.data > 0.0))

    return _make("relu", out, (x,), backward_fn)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    v = x.data
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, g * out * (1.0 - out))

    return _make("sigmoid", out, (x,), backward_fn)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, g * (1.0 - out * out))

    return _make("tanh", out, (x,), backward_fn)


def tensor_sum(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis)

    def backward_fn(g: np.ndarray) -> None:
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.shape).copy())
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(g, axis), x.shape).copy())

    return _make("sum", out, (x,), backward_fn)


def tensor_mean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    out = np.mean(x.data, axis=axis)
    count = x.data.size if axis is None else x.shape[axis]

    def backward_fn(g: np.ndarray) -> None:
        scaled = g / count
        if axis is None:
            _accumulate(x, np.broadcast_to(scaled, x.shape).copy())
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(scaled, axis), x.shape).copy())

    return _make("mean", out, (x,), backward_fn)


def absolute(x) -> Tensor:
    x = as_tensor(x)
    out = np.abs(x.data)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, g * np.sign(x.data))

    return _make("abs", out, (x,), backward_fn)


def embedding(table, ids) -> Tensor:
    """Row lookup ``table[ids]``; gradients scatter-add into the table."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.ndim != 1:
        raise ShapeError(f"embedding: ids must be 1-D, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding: id out of range for table with {table.shape[0]} rows")
    out = table.data[ids]

    def backward_fn(g: np.ndarray) -> None:
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    return _make("embedding", out, (table,), backward_fn)


def conv2d(x, w) -> Tensor:
    """3x3, stride-1, zero-padded convolution over channels-last images.

    ``x`` is (H, W, Cin) or (B, H, W, Cin); ``w`` is (3, 3, Cin, Cout).
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.data.ndim != 4 or w.shape[:2] != (3, 3):
        raise ShapeError(f"conv2d: kernel must be (3, 3, Cin, Cout), got {w.shape}")
    batched = x.data.ndim == 4
    if x.data.ndim not in (3, 4):
        raise ShapeError(f"conv2d: input must be (H, W, C) or (B, H, W, C), got {x.shape}")
    xb = x.data if batched else x.data[None]
    bsz, h, wid, cin = xb.shape
    if cin != w.shape[2]:
        raise ShapeError(
            f"conv2d: input channels {x.shape} do not match kernel {w.shape}")
    cout = w.shape[3]
    xp = np.zeros((bsz, h + 2, wid + 2, cin))
    xp[:, 1:-1, 1:-1, :] = xb
    out = np.zeros((bsz, h, wid, cout))
    for dy in range(3):
        for dx in range(3):
            out += np.matmul(xp[:, dy:dy + h, dx:dx + wid, :], w.data[dy, dx])
    if not batched:
        out = out[0]

    def backward_fn(g: np.ndarray) -> None:
        gb = g if batched else g[None]
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for dy in range(3):
                for dx in range(3):
                    gw[dy, dx] = np.tensordot(
                        xp[:, dy:dy + h, dx:dx + wid, :], gb, axes=([0, 1, 2], [0, 1, 2]))
            _accumulate(w, gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for dy in range(3):
                for dx in range(3):
                    gxp[:, dy:dy + h, dx:dx + wid, :] += np.matmul(gb, w.data[dy, dx].T)
            gx = gxp[:, 1:-1, 1:-1, :]
            _accumulate(x, gx if batched else gx[0])

    return _make("conv2d", out, (x, w), backward_fn)


def bilinear_sample(image, flow) -> Tensor:
    """Warp ``image`` by a dense pixel flow with bilinear interpolation.

    ``out[y, x] = image(x + flow_x, y + flow_y)`` with border clamping;
    differentiable with respect to both the image and the flow. Shapes:
    image (H, W, C) or (B, H, W, C), flow matching with 2 channels.
    """
    image, flow = as_tensor(image), as_tensor(flow)
    batched = image.data.ndim == 4
    if image.data.ndim not in (3, 4):
        raise ShapeError(f"bilinear_sample: image must be 3-D or 4-D, got {image.shape}")
    if flow.data.ndim != image.data.ndim or flow.shape[-1] != 2 \
            or flow.shape[:-1] != image.shape[:-1]:
        raise ShapeError(
            f"bilinear_sample: flow shape {flow.shape} does not match image {image.shape}")
    ib = image.data if batched else image.data[None]
    fb = flow.data if batched else flow.data[None]
    bsz, h, wid, _ = ib.shape
    ys, xs = np.meshgrid(np.arange(h), np.arange(wid), indexing="ij")
    sx = xs[None] + fb[..., 0]
    sy = ys[None] + fb[..., 1]
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    wx = sx - x0
    wy = sy - y0
    x0i = np.clip(x0, 0, wid - 1).astype(np.int64)
    x1i = np.clip(x0 + 1, 0, wid - 1).astype(np.int64)
    y0i = np.clip(y0, 0, h - 1).astype(np.int64)
    y1i = np.clip(y0 + 1, 0, h - 1).astype(np.int64)
    bidx = np.broadcast_to(np.arange(bsz)[:, None, None], (bsz, h, wid))
    i00 = ib[bidx, y0i, x0i]
    i01 = ib[bidx, y0i, x1i]
    i10 = ib[bidx, y1i, x0i]
    i11 = ib[bidx, y1i, x1i]
    w00 = ((1 - wy) * (1 - wx))[..., None]
    w01 = ((1 - wy) * wx)[..., None]
    w10 = (wy * (1 - wx))[..., None]
    w11 = (wy * wx)[..., None]
    out = w00 * i00 + w01 * i01 + w10 * i10 + w11 * i11
    if not batched:
        out = out[0]

    def backward_fn(g: np.ndarray) -> None:
        gb = g if batched else g[None]
        if image.requires_grad:
            gi = np.zeros_like(ib)
            np.add.at(gi, (bidx, y0i, x0i), w00 * gb)
            np.add.at(gi, (bidx, y0i, x1i), w01 * gb)
            np.add.at(gi, (bidx, y1i, x0i), w10 * gb)
            np.add.at(gi, (bidx, y1i, x1i), w11 * gb)
            _accumulate(image, gi if batched else gi[0])
        if flow.requires_grad:
            dx = (1 - wy)[..., None] * (i01 - i00) + wy[..., None] * (i11 - i10)
            dy = (1 - wx)[..., None] * (i10 - i00) + wx[..., None] * (i11 - i01)
            gf = np.empty_like(fb)
            gf[..., 0] = np.sum(gb * dx, axis=-1)
            gf[..., 1] = np.sum(gb * dy, axis=-1)
            _accumulate(flow, gf if batched else gf[0])

    return _make("bilinear_sample", out, (image, flow), backward_fn)


def clamp01(x) -> Tensor:
    """Clamp to [0, 1], expressed inside the closed op set."""
    return relu(x) - relu(add(x, -1.0))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def topo_order(root: Tensor) -> list[Tensor]:
    """Tensors reachable from ``root`` in topological order (parents first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor in the graph.

    ``loss`` must be a scalar produced by an op. Each node's backward
    closure runs exactly once; repeated calls keep accumulating until
    grads are explicitly zeroed.
    """
    if loss.data.shape != ():
        raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._backward_fn is None:
        raise GraphError("backward: loss is not the result of a recorded forward op")
    order = topo_order(loss)
    _accumulate(loss, np.ones_like(loss.data))
    with _quiet():
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------

def finite_difference_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor],
                            h: float = 1e-5, sample: int | None = None,
                            rng: np.random.Generator | None = None) -> float:
    """Max relative error between autodiff and central finite differences.

    ``fn`` rebuilds the scalar loss from the current ``inputs`` data on
    every call; ``inputs`` are the tensors to differentiate. When
    ``sample`` is given, only that many randomly chosen coordinates are
    probed per input (for expensive graphs). The relative error uses a
    1e-3 denominator floor so near-zero gradients are compared absolutely.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    loss = fn()
    backward(loss)
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        grad = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        n = flat.size
        if sample is not None and sample < n:
            coords = rng.choice(n, size=sample, replace=False)
        else:
            coords = range(n)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = fn().item()
            flat[idx] = orig - h
            f_minus = fn().item()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = grad.reshape(-1)[idx]
            denom = max(abs(numeric), abs(analytic), 1e-3)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst
