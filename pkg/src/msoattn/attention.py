"""Attention primitives and the many-source-one-target block.

``simplified_attention`` is multi-head attention whose per-head projections
are frozen to column-slab selectors and whose output projection is the
identity, so it carries no learnable weights. ``mso_block`` concatenates the
attention of one target to every source (itself included), projects the
result back to width ``d`` and adds it residually before layer norm.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ops
from .ops import softmax_np
from .tensor import ConfigError, Parameter, ShapeError, Tensor, as_tensor, record

NEG_INF = -1e9
_UNDERFLOW = 1e-200


# ---------------------------------------------------------------------------
# Plain scaled dot-product and learnable multi-head attention
# ---------------------------------------------------------------------------

def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, key_bias: np.ndarray | None = None):
    """softmax(q k^T / sqrt(width)) v, built from tape primitives.

    Returns ``(output, weights)`` where ``weights`` is the plain ndarray of
    attention probabilities (rows = queries).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.cols != k.cols:
        raise ShapeError(f"query width {q.cols} != key width {k.cols}")
    if k.rows != v.rows:
        raise ShapeError(f"{k.rows} keys but {v.rows} values")
    logits = ops.scale(ops.matmul(q, ops.transpose(k)), 1.0 / math.sqrt(q.cols))
    if key_bias is not None:
        logits = ops.add(logits, Tensor(np.asarray(key_bias)[..., None, :]))
    w = ops.softmax_rows(logits)
    return ops.matmul(w, v), w.value


@dataclass
class MhaParams:
    """Per-head projections (d x d/H) and the d x d output projection."""

    wq: list[Parameter]
    wk: list[Parameter]
    wv: list[Parameter]
    wo: Parameter

    @property
    def heads(self) -> int:
        return len(self.wq)

    def parameters(self) -> list[Parameter]:
        return [*self.wq, *self.wk, *self.wv, self.wo]


def _check_heads(h: int, d: int) -> int:
    if h < 1 or d % h:
        raise ConfigError(f"number of heads {h} must divide feature width {d}")
    return d // h


def init_mha_params(h: int, d: int, rng: np.random.Generator, prefix: str = "mha") -> MhaParams:
    dh = _check_heads(h, d)
    std = math.sqrt(1.0 / d)

    def mk(name, shape):
        return Parameter(f"{prefix}.{name}", rng.normal(0.0, std, shape))

    return MhaParams(
        wq=[mk(f"wq{i}", (d, dh)) for i in range(h)],
        wk=[mk(f"wk{i}", (d, dh)) for i in range(h)],
        wv=[mk(f"wv{i}", (d, dh)) for i in range(h)],
        wo=mk("wo", (d, d)),
    )


def slab_selector(h: int, d: int, head: int) -> np.ndarray:
    """d x d/H matrix whose rows ``head*d/H .. (head+1)*d/H`` form an identity."""
    dh = _check_heads(h, d)
    m = np.zeros((d, dh))
    m[head * dh:(head + 1) * dh, :] = np.eye(dh)
    return m


def frozen_mha_params(h: int, d: int, prefix: str = "frozen") -> MhaParams:
    """Slab-selector projections and identity output, all non-trainable."""
    _check_heads(h, d)

    def sel(kind, i):
        return Parameter(f"{prefix}.{kind}{i}", slab_selector(h, d, i), trainable=False)

    return MhaParams(
        wq=[sel("wq", i) for i in range(h)],
        wk=[sel("wk", i) for i in range(h)],
        wv=[sel("wv", i) for i in range(h)],
        wo=Parameter(f"{prefix}.wo", np.eye(d), trainable=False),
    )


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, p: MhaParams) -> Tensor:
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.cols
    _check_heads(p.heads, d)
    if k.cols != d or v.cols != d:
        raise ShapeError(f"multi-head attention needs equal widths, got {q.cols}, {k.cols}, {v.cols}")
    heads = []
    for wq, wk, wv in zip(p.wq, p.wk, p.wv):
        out, _ = scaled_dot_attention(ops.matmul(q, wq), ops.matmul(k, wk), ops.matmul(v, wv))
        heads.append(out)
    return ops.matmul(ops.concat_cols(heads), p.wo)


# ---------------------------------------------------------------------------
# Frozen-weight (slab) attention, fused
# ---------------------------------------------------------------------------

def _split_heads(a: np.ndarray, h: int) -> np.ndarray:
    *lead, n, d = a.shape
    return np.swapaxes(a.reshape(*lead, n, h, d // h), -2, -3)


def _merge_heads(a: np.ndarray) -> np.ndarray:
    *lead, h, n, dh = a.shape
    return np.swapaxes(a, -2, -3).reshape(*lead, n, h * dh)


def _head_weights(xh: np.ndarray, yh: np.ndarray, key_bias) -> np.ndarray:
    s = xh @ np.swapaxes(yh, -1, -2) / math.sqrt(xh.shape[-1])
    if key_bias is not None:
        s = s + np.asarray(key_bias)[..., None, None, :]
    return softmax_np(s)


def _attend_backward(g, xh, yh, w, h):
    """Gradients of merge(w @ yh) w.r.t. x and y given attention weights ``w``."""
    gh = _split_heads(g, h)
    inv = 1.0 / math.sqrt(xh.shape[-1])
    gw = gh @ np.swapaxes(yh, -1, -2)
    gy = np.swapaxes(w, -1, -2) @ gh
    gs = w * (gw - (gw * w).sum(axis=-1, keepdims=True)) * inv
    gx = gs @ yh
    gy = gy + np.swapaxes(gs, -1, -2) @ xh
    return _merge_heads(gx), _merge_heads(gy)


def simplified_attention(
    x: Tensor,
    y: Tensor,
    h: int,
    key_bias: np.ndarray | None = None,
    return_weights: bool = False,
):
    """Attention of target ``x`` (M x d) to source ``y`` (N x d) on H column slabs.

    Head ``i`` compares and mixes only columns ``i*d/H:(i+1)*d/H``; the
    logits are divided by sqrt(d/H). ``key_bias`` (shape (..., N)) is added
    to the logits of every query row, e.g. -1e9 on padded keys.
    """
    x, y = as_tensor(x), as_tensor(y)
    if x.cols != y.cols:
        raise ShapeError(f"target width {x.cols} != source width {y.cols}")
    _check_heads(h, x.cols)
    xh = _split_heads(x.value, h)
    yh = _split_heads(y.value, h)
    w = _head_weights(xh, yh, key_bias)
    out = record(
        Tensor(_merge_heads(w @ yh)),
        (x, y),
        lambda g: _attend_backward(g, xh, yh, w, h),
    )
    return (out, w) if return_weights else out


def paired_attention(x: Tensor, y: Tensor, h: int, return_weights: bool = False):
    """Both directions, Ā_Y(X) and Ā_X(Y), from a single similarity matrix per head.

    The reverse direction reuses the transpose of ``x_h y_h^T``.
    """
    x, y = as_tensor(x), as_tensor(y)
    if x.cols != y.cols:
        raise ShapeError(f"target width {x.cols} != source width {y.cols}")
    _check_heads(h, x.cols)
    xh = _split_heads(x.value, h)
    yh = _split_heads(y.value, h)
    s = (xh / math.sqrt(xh.shape[-1])) @ np.swapaxes(yh, -1, -2)
    # one exponential serves both directions; shifting by the per-head max
    # is exact unless some row or column underflows, then fall back
    e = s - s.max(axis=(-2, -1), keepdims=True)
    np.exp(e, out=e)
    row_sum = e.sum(axis=-1, keepdims=True)
    col_sum = np.swapaxes(e.sum(axis=-2, keepdims=True), -1, -2)
    if row_sum.min() > _UNDERFLOW and col_sum.min() > _UNDERFLOW:
        e_t = np.swapaxes(e, -1, -2)
        val_x = (e @ yh) / row_sum
        val_y = (e_t @ xh) / col_sum
        weights = (lambda: e / row_sum, lambda: e_t / col_sum)
    else:
        w_xy = softmax_np(s, axis=-1)
        w_yx = np.swapaxes(softmax_np(s, axis=-2), -1, -2)
        val_x, val_y = w_xy @ yh, w_yx @ xh
        weights = (lambda: w_xy, lambda: w_yx)
    out_x = record(Tensor(_merge_heads(val_x)), (x, y),
                   lambda g: _attend_backward(g, xh, yh, weights[0](), h))
    out_y = record(Tensor(_merge_heads(val_y)), (y, x),
                   lambda g: _attend_backward(g, yh, xh, weights[1](), h))
    if return_weights:
        return out_x, out_y, weights[0](), weights[1]()
    return out_x, out_y


# ---------------------------------------------------------------------------
# Many-source-one-target block
# ---------------------------------------------------------------------------

@dataclass
class BlockParams:
    w: Parameter
    b: Parameter
    ln_gain: Parameter
    ln_bias: Parameter

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b, self.ln_gain, self.ln_bias]

    @property
    def width(self) -> int:
        return self.w.cols

    @property
    def n_inputs(self) -> int:
        return self.w.rows // self.w.cols


def init_block_params(n_inputs: int, d: int, rng: np.random.Generator, prefix: str = "block") -> BlockParams:
    """He-normal W (fan-in n_inputs*d), zero bias, unit layer-norm gain."""
    fan_in = n_inputs * d
    return BlockParams(
        w=Parameter(f"{prefix}.w", rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, d))),
        b=Parameter(f"{prefix}.b", np.zeros((1, d))),
        ln_gain=Parameter(f"{prefix}.ln_gain", np.ones((1, d))),
        ln_bias=Parameter(f"{prefix}.ln_bias", np.zeros((1, d))),
    )


def init_pads(d: int, rng: np.random.Generator, name: str = "pad") -> Parameter:
    """Two He-normal "no-where-to-attend" rows (fan-in d)."""
    return Parameter(name, rng.normal(0.0, math.sqrt(2.0 / d), (2, d)))


def pad_no_attend(y: Tensor, pads: Tensor) -> Tensor:
    """Append the two pad rows below ``y``: (N, d) -> (N+2, d)."""
    y, pads = as_tensor(y), as_tensor(pads)
    if y.cols != pads.cols:
        raise ShapeError(f"pad width {pads.cols} != source width {y.cols}")
    if y.rows == 0:
        return pads
    return ops.concat_rows([y, pads])


def _pad_bias(mask: np.ndarray | None, n_pad: int) -> np.ndarray | None:
    if mask is None:
        return None
    bias = np.where(np.asarray(mask, dtype=bool), 0.0, NEG_INF)
    if n_pad:
        bias = np.concatenate([bias, np.zeros(bias.shape[:-1] + (n_pad,))], axis=-1)
    return bias


@dataclass
class AttentionRecord:
    """Attention weight maps keyed by (stack, target, source).

    Each entry is an array of shape (..., H, target_rows, source_rows).
    """

    maps: dict[tuple[int, str, str], np.ndarray] = field(default_factory=dict)

    def add(self, stack: int, target: str, source: str, weights: np.ndarray) -> None:
        self.maps[(stack, target, source)] = weights

    def head_average(self) -> dict[tuple[int, str, str], np.ndarray]:
        return {k: w.mean(axis=-3) for k, w in self.maps.items()}

    def to_json(self, batch_index: int | None = None) -> str:
        """JSON keyed ``"stack/target/source/head"`` with row-major nested lists."""
        doc = {}
        for (stack, tgt, src), w in sorted(self.maps.items()):
            if w.ndim == 4:
                w = w[batch_index or 0]
            for head in range(w.shape[0]):
                doc[f"{stack}/{tgt}/{src}/{head}"] = w[head].tolist()
        return json.dumps(doc, indent=1, sort_keys=True)


def mso_block(
    x: Tensor,
    sources: Sequence[Tensor],
    p: BlockParams,
    h: int,
    rng: np.random.Generator | None = None,
    training: bool = False,
    *,
    dropout_rate: float = 0.1,
    self_attention: bool = True,
    pads: Sequence[Tensor | None] | None = None,
    key_masks: Sequence[np.ndarray | None] | None = None,
    on_weights=None,
) -> Tensor:
    """One many-source-one-target block.

    ``pads`` and ``key_masks`` align with the attended inputs, i.e.
    ``[x, *sources]`` with self-attention and ``sources`` without it.
    ``on_weights(i, w)`` is called with the per-head weights of input ``i``.
    """
    x = as_tensor(x)
    d = x.cols
    inputs = ([x] if self_attention else []) + [as_tensor(s) for s in sources]
    if not inputs:
        raise ConfigError("block has no input to attend to (no sources, self-attention off)")
    if p.w.rows != len(inputs) * d or p.w.cols != d:
        raise ConfigError(
            f"block weight is {p.w.shape}, expected ({len(inputs) * d}, {d}) for {len(inputs)} inputs"
        )
    pads = list(pads) if pads is not None else [None] * len(inputs)
    key_masks = list(key_masks) if key_masks is not None else [None] * len(inputs)
    if len(pads) != len(inputs) or len(key_masks) != len(inputs):
        raise ConfigError("pads/key_masks must align with the attended inputs")

    attended = []
    for i, (src, pad, mask) in enumerate(zip(inputs, pads, key_masks)):
        if src.cols != d:
            raise ShapeError(f"source {i} width {src.cols} != target width {d}")
        keys = pad_no_attend(src, pad) if pad is not None else src
        bias = _pad_bias(mask, keys.rows - src.rows)
        out, w = simplified_attention(x, keys, h, key_bias=bias, return_weights=True)
        if on_weights is not None:
            on_weights(i, w)
        attended.append(out)

    cat = ops.concat_cols(attended) if len(attended) > 1 else attended[0]
    hidden = ops.relu(ops.linear(cat, p.w, p.b))
    hidden = ops.dropout(hidden, dropout_rate, rng, training)
    return ops.layer_norm(ops.add(hidden, x), p.ln_gain, p.ln_bias)
