"""Differentiable operations on :class:`~msoattn.tensor.Tensor`.

Every op computes its forward value with numpy and, when a tape is active,
records a closure mapping the output gradient to one gradient per input.
Shapes follow ``np.matmul`` conventions: the last two axes are rows x cols.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Parameter, ShapeError, Tensor, as_tensor, record

LN_EPS = 1e-6


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    out = Tensor(av @ bv)

    def backward(g):
        return g @ _swap(bv), _swap(av) @ g

    return record(out, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    out = Tensor(_swap(x.value))
    return record(out, (x,), lambda g: (_swap(g),))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value + b.value)
    return record(out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value - b.value)
    return record(out, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = Tensor(av * bv)
    return record(out, (a, b), lambda g: (g * bv, g * av))


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.value * c)
    return record(out, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    pos = x.value > 0
    out = Tensor(np.where(pos, x.value, 0.0))
    return record(out, (x,), lambda g: (g * pos,))


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    out = Tensor(s)
    return record(out, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.value)
    out = Tensor(t)
    return record(out, (x,), lambda g: (g * (1.0 - t * t),))


def softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction."""
    p = softmax_np(x.value)
    out = Tensor(p)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return record(out, (x,), backward)


def log_softmax_rows(x: Tensor) -> Tensor:
    z = x.value - x.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    ls = z - lse
    out = Tensor(ls)

    def backward(g):
        return (g - np.exp(ls) * g.sum(axis=-1, keepdims=True),)

    return record(out, (x,), backward)


def softmax_cols(x: Tensor) -> Tensor:
    """Softmax down each column (over rows); used for pooling weights."""
    return transpose(softmax_rows(transpose(x)))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    d = x.cols
    if gain.cols != d or bias.cols != d:
        raise ShapeError(f"layer_norm: width {d} vs gain {gain.shape}, bias {bias.shape}")
    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv = gain.value
    out = Tensor(xhat * gv + bias.value)

    def backward(g):
        gx = g * gv
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, g * xhat, g

    return record(out, (x, gain, bias), backward)


def concat_cols(xs: Sequence[Tensor]) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat_cols of an empty list")
    rows = {x.rows for x in xs}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[x.shape for x in xs]}")
    widths = [x.cols for x in xs]
    batch = np.broadcast_shapes(*[x.value.shape[:-2] for x in xs])
    vals = [np.broadcast_to(x.value, batch + x.value.shape[-2:]) for x in xs]
    out = Tensor(np.concatenate(vals, axis=-1))
    cuts = np.cumsum(widths)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=-1))

    return record(out, tuple(xs), backward)


def split_cols(x: Tensor, n: int) -> list[Tensor]:
    if x.cols % n:
        raise ShapeError(f"split_cols: width {x.cols} not divisible by {n}")
    w = x.cols // n
    return [slice_cols(x, i * w, (i + 1) * w) for i in range(n)]


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(x.value[..., start:stop])
    shape = x.value.shape

    def backward(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return record(out, (x,), backward)


def concat_rows(xs: Sequence[Tensor]) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    widths = {x.cols for x in xs}
    if len(widths) != 1:
        raise ShapeError(f"concat_rows: widths differ {[x.shape for x in xs]}")
    batch = np.broadcast_shapes(*[x.value.shape[:-2] for x in xs])
    vals = [np.broadcast_to(x.value, batch + x.value.shape[-2:]) for x in xs]
    out = Tensor(np.concatenate(vals, axis=-2))
    cuts = np.cumsum([x.rows for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=-2))

    return record(out, tuple(xs), backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(x.value[..., start:stop, :])
    shape = x.value.shape

    def backward(g):
        full = np.zeros(shape)
        full[..., start:stop, :] = g
        return (full,)

    return record(out, (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = x.value.shape
    out = Tensor(x.value.reshape(shape))
    return record(out, (x,), lambda g: (g.reshape(orig),))


def repeat_batch(x: Tensor, n: int) -> Tensor:
    """(B, r, c) -> (B*n, r, c), each batch item repeated ``n`` times in place."""
    b, r, c = x.value.shape
    out = Tensor(np.repeat(x.value, n, axis=0))
    return record(out, (x,), lambda g: (g.reshape(b, n, r, c).sum(axis=1),))


def sum_all(x: Tensor) -> Tensor:
    shape = x.value.shape
    out = Tensor(x.value.sum())
    return record(out, (x,), lambda g: (np.broadcast_to(g.reshape(()), shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.value.size)


def pick(x: Tensor, index: np.ndarray) -> Tensor:
    """Select ``x[..., i, index[..., i]]`` per row; returns shape (..., rows, 1)."""
    idx = np.asarray(index, dtype=np.int64)[..., None]
    out = Tensor(np.take_along_axis(x.value, idx, axis=-1))
    shape = x.value.shape

    def backward(g):
        full = np.zeros(shape)
        np.put_along_axis(full, idx, g, axis=-1)
        return (full,)

    return record(out, (x,), backward)


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: ``ids`` of shape (N,) -> (N, 1, width)."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.rows
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ValueError(f"token id out of range for vocabulary of {vocab}")
    out = Tensor(table.value[ids][:, None, :])

    def backward(g):
        full = np.zeros(table.value.shape)
        np.add.at(full, ids, g[:, 0, :])
        return (full,)

    return record(out, (table,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity at inference or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must satisfy 0 <= rate < 1, got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.value.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.value * keep)
    return record(out, (x,), lambda g: (g * keep,))


def linear(x: Tensor, w: Parameter, b: Parameter | None = None) -> Tensor:
    y = matmul(x, w)
    return add(y, b) if b is not None else y


def log(x: Tensor) -> Tensor:
    xv = x.value
    out = Tensor(np.log(xv))
    return record(out, (x,), lambda g: (g / xv,))
