"""Minimal reverse-mode autodiff over numpy arrays.

Every op builds a new :class:`Tensor` holding its parents and a closure that
pushes the upstream gradient back to them. ``Tensor.backward`` walks the graph
in reverse topological order.
"""

from __future__ import annotations

import contextlib

import numpy as np

from metadepth.errors import EmptySupportError, NumericError, ShapeError, StateError

_DTYPES = {"f32": np.float32, "f64": np.float64}
_precision = {"dtype": np.float32}


def set_precision(name: str) -> None:
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    _precision["dtype"] = _DTYPES[name]


def get_dtype():
    return _precision["dtype"]


def precision_name() -> str:
    return "f64" if _precision["dtype"] is np.float64 else "f32"


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the global floating point precision."""
    previous = precision_name()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {op}")


class Tensor:
    __slots__ = ("data", "grad", "parents", "_backward", "op", "name")

    def __init__(self, data, parents=(), backward=None, op="leaf", name=None):
        self.data = data
        self.grad = None
        self.parents = parents
        self._backward = backward
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def requires_grad(self):
        return self.name is not None or bool(self.parents)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op})"

    def backward(self):
        if self.data.size != 1:
            raise ShapeError("backward() needs a scalar output")
        if not self.requires_grad:
            raise StateError("tensor has no recorded graph to differentiate")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        return order


def _accum(t: Tensor, g):
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=get_dtype()))


def _make(data, parents, backward, op):
    _check_finite(data, op)
    return Tensor(data, parents=parents, backward=backward, op=op)


# elementwise -----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch {a.shape} vs {b.shape}")

    def back(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), back, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub shape mismatch {a.shape} vs {b.shape}")

    def back(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), back, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch {a.shape} vs {b.shape}")

    def back(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), back, "mul")


def affine(x: Tensor, scale: float, shift: float) -> Tensor:
    """``scale * x + shift`` with python-float coefficients."""
    dt = x.data.dtype
    s, c = dt.type(scale), dt.type(shift)

    def back(g):
        _accum(x, g * s)

    return _make(x.data * s + c, (x,), back, "affine")


def reciprocal(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", over="ignore"):
        out = 1.0 / x.data  # non-finite results are rejected by _make

    def back(g):
        _accum(x, -g * out * out)

    return _make(out, (x,), back, "reciprocal")


def square(x: Tensor) -> Tensor:
    def back(g):
        _accum(x, 2.0 * g * x.data)

    return _make(x.data * x.data, (x,), back, "square")


def total(x: Tensor) -> Tensor:
    def back(g):
        _accum(x, np.broadcast_to(g, x.shape).copy())

    return _make(np.sum(x.data).reshape(()), (x,), back, "sum")


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    pos = x.data > 0
    neg_part = alpha * np.expm1(np.minimum(x.data, 0))
    out = np.where(pos, x.data, neg_part)

    def back(g):
        _accum(x, g * np.where(pos, 1.0, neg_part + alpha).astype(x.data.dtype))

    return _make(out.astype(x.data.dtype, copy=False), (x,), back, "elu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)

    def back(g):
        _accum(x, g * out * (1.0 - out))

    return _make(out, (x,), back, "sigmoid")


def concat(tensors, axis=1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back, "concat")


# convolution -----------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """3x3 convolution, zero padding 1, NCHW layout."""
    B, C, H, W = x.shape
    Cout, Cin, kh, kw = weight.shape
    if Cin != C or (kh, kw) != (3, 3):
        raise ShapeError(f"conv2d weight {weight.shape} incompatible with input {x.shape}")
    s = stride
    Ho = (H - 1) // s + 1
    Wo = (W - 1) // s + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    patches = [xp[:, :, i : i + s * (Ho - 1) + 1 : s, j : j + s * (Wo - 1) + 1 : s] for i in range(3) for j in range(3)]
    # (B, C, 9, Ho*Wo) -> (B, C*9, Ho*Wo); channel-major matches weight.reshape(Cout, -1)
    cols = np.stack(patches, axis=2).reshape(B, C * 9, Ho * Wo)
    wmat = weight.data.reshape(Cout, C * 9)
    out = np.matmul(wmat, cols) + bias.data.reshape(1, Cout, 1)
    out = out.reshape(B, Cout, Ho, Wo)

    def back(g):
        g2 = g.reshape(B, Cout, Ho * Wo)
        _accum(bias, g2.sum(axis=(0, 2)))
        gw = np.einsum("boh,bkh->ok", g2, cols, optimize=True)
        _accum(weight, gw.reshape(weight.shape))
        if not x.requires_grad:
            return
        gcols = np.matmul(wmat.T, g2).reshape(B, C, 9, Ho, Wo)
        gxp = np.zeros_like(xp)
        k = 0
        for i in range(3):
            for j in range(3):
                gxp[:, :, i : i + s * (Ho - 1) + 1 : s, j : j + s * (Wo - 1) + 1 : s] += gcols[:, :, k]
                k += 1
        _accum(x, gxp[:, :, 1:-1, 1:-1])

    return _make(out, (x, weight, bias), back, "conv2d")


# upsampling ------------------------------------------------------------

_UPSAMPLE_CACHE = {}


def upsample_matrix(n: int, dtype) -> np.ndarray:
    """(2n, n) bilinear interpolation matrix, half-pixel centers, edge clamped."""
    key = (n, np.dtype(dtype).str)
    m = _UPSAMPLE_CACHE.get(key)
    if m is None:
        m = np.zeros((2 * n, n), dtype=np.float64)
        for o in range(2 * n):
            src = (o + 0.5) / 2.0 - 0.5
            lo = int(np.floor(src))
            frac = src - lo
            m[o, min(max(lo, 0), n - 1)] += 1.0 - frac
            m[o, min(max(lo + 1, 0), n - 1)] += frac
        m = m.astype(dtype)
        _UPSAMPLE_CACHE[key] = m
    return m


def upsample2x(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    uh = upsample_matrix(H, x.data.dtype)
    uw = upsample_matrix(W, x.data.dtype)
    out = np.matmul(np.matmul(uh, x.data), uw.T)

    def back(g):
        _accum(x, np.matmul(np.matmul(uh.T, g), uw))

    return _make(out, (x,), back, "upsample2x")


# losses ----------------------------------------------------------------


def masked_mse(pred: Tensor, target: np.ndarray, valid: np.ndarray) -> Tensor:
    """Mean over images of the per-image mean squared error on valid pixels.

    Arrays with fewer than two axes are treated as a single image.
    """
    if pred.shape != target.shape or valid.shape != target.shape:
        raise ShapeError(f"loss shapes differ: pred {pred.shape}, target {target.shape}, valid {valid.shape}")
    B = pred.shape[0] if pred.data.ndim >= 2 else 1
    counts = valid.reshape(B, -1).sum(axis=1)
    if np.any(counts == 0):
        bad = int(np.flatnonzero(counts == 0)[0])
        raise EmptySupportError(f"image {bad} of the batch has no valid pixels")
    dt = pred.data.dtype
    diff = ((pred.data - target.astype(dt)) * valid).reshape(B, -1)
    weights = (1.0 / (counts * B)).astype(dt)[:, None]
    value = np.sum(diff * diff * weights).reshape(()).astype(dt)

    def back(g):
        _accum(pred, (2.0 * g * diff * weights).reshape(pred.shape))

    return _make(value, (pred,), back, "masked_mse")
