"""Context pooling, discriminative and generative decoders, and their losses.

Shapes: a batch of B episodes is carried on a leading axis. Context vectors
are (B, 1, d); candidate vectors (B, C, d); candidate token sequences
(B, C, T+1) with the start token in column 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ops
from .attention import NEG_INF
from .ops import softmax_np
from .tensor import ConfigError, Parameter, ShapeError, StateError, Tensor, as_tensor

AGGREGATIONS = {
    "Q": ("Q",),
    "QV": ("V", "Q"),
    "QVR": ("V", "Q", "R"),
}


@dataclass
class ContextHead:
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]


def init_context_head(d: int, rng: np.random.Generator, prefix: str = "ctx") -> ContextHead:
    return ContextHead(
        w1=Parameter(f"{prefix}.w1", rng.normal(0.0, math.sqrt(2.0 / d), (d, d))),
        b1=Parameter(f"{prefix}.b1", np.zeros((1, d))),
        w2=Parameter(f"{prefix}.w2", rng.normal(0.0, math.sqrt(1.0 / d), (d, 1))),
        b2=Parameter(f"{prefix}.b2", np.zeros((1, 1))),
    )


def context_vector(u: Tensor, head: ContextHead, mask: np.ndarray | None = None):
    """Attention pooling of a utility into one d-vector.

    Returns ``(c, a)``: ``c`` has shape (..., 1, d), ``a`` is the ndarray of
    pooling weights over entities (shape (..., M)). Masked entities get 0.
    """
    u = as_tensor(u)
    scores = ops.linear(ops.relu(ops.linear(u, head.w1, head.b1)), head.w2, head.b2)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise StateError("context pooling over a utility whose entities are all masked")
        scores = ops.add(scores, Tensor(np.where(mask, 0.0, NEG_INF)[..., None]))
    a = ops.softmax_cols(scores)
    c = ops.matmul(ops.transpose(a), u)
    return c, a.value[..., 0]


@dataclass
class FusionParams:
    w: Parameter
    b: Parameter
    aggregation: str = "QV"

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


def init_fusion(d: int, rng: np.random.Generator, aggregation: str = "QV", prefix: str = "fuse") -> FusionParams:
    if aggregation not in AGGREGATIONS:
        raise ConfigError(f"unknown aggregation {aggregation!r}; choose from {sorted(AGGREGATIONS)}")
    k = len(AGGREGATIONS[aggregation])
    return FusionParams(
        # logits a.c start with unit spread for unit-variance candidates
        w=Parameter(f"{prefix}.w", rng.normal(0.0, 1.0 / (d * math.sqrt(k)), (k * d, d))),
        b=Parameter(f"{prefix}.b", np.zeros((1, d))),
        aggregation=aggregation,
    )


def fuse_context(contexts: Sequence[Tensor], fusion: FusionParams) -> Tensor:
    """Project the concatenated context vectors (ordered V, Q, R) to width d."""
    k = len(AGGREGATIONS[fusion.aggregation])
    if len(contexts) != k:
        raise ConfigError(f"aggregation {fusion.aggregation} takes {k} context vectors, got {len(contexts)}")
    d = contexts[0].cols
    if fusion.w.rows != k * d:
        raise ConfigError(f"fusion weight has {fusion.w.rows} rows, aggregation {fusion.aggregation} needs {k * d}")
    cat = ops.concat_cols(contexts) if k > 1 else as_tensor(contexts[0])
    return ops.linear(cat, fusion.w, fusion.b)


# ---------------------------------------------------------------------------
# Discriminative decoder
# ---------------------------------------------------------------------------

@dataclass
class CandidateSet:
    """C candidates per episode: vectors (..., C, d), tokens (..., C, T+1)."""

    vectors: np.ndarray | None = None
    tokens: np.ndarray | None = None
    gt_index: np.ndarray | int | None = None
    relevance: np.ndarray | None = None

    def __post_init__(self):
        if self.relevance is not None:
            rel = np.asarray(self.relevance, dtype=np.float64)
            if rel.min() < 0 or rel.max() > 1:
                raise ValueError("relevance scores must lie in [0, 1]")
            self.relevance = rel

    @property
    def size(self) -> int:
        src = self.vectors if self.vectors is not None else self.tokens
        return src.shape[-2]

    def target(self) -> np.ndarray:
        """Loss target: the relevance vector when present, else a one-hot."""
        if self.relevance is not None:
            return self.relevance
        if self.gt_index is None:
            raise ValueError("candidate set has neither a ground-truth index nor relevance scores")
        gt = np.asarray(self.gt_index)
        y = np.zeros(gt.shape + (self.size,))
        np.put_along_axis(y, gt[..., None], 1.0, axis=-1)
        return y


def disc_logits(c: Tensor, vectors) -> Tensor:
    """Inner products a_i . c, shape (..., 1, C)."""
    a = as_tensor(vectors)
    if a.rows == 0:
        raise ValueError("empty candidate set")
    if a.cols != c.cols:
        raise ShapeError(f"candidate width {a.cols} != context width {c.cols}")
    return ops.matmul(c, ops.transpose(a))


def disc_scores(c: Tensor, vectors) -> Tensor:
    return ops.softmax_rows(disc_logits(c, vectors))


def _normalized_target(target) -> np.ndarray:
    y = np.asarray(target, dtype=np.float64)
    total = y.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("loss target sums to zero")
    return y / total


def disc_loss(p: Tensor, target) -> Tensor:
    """Cross-entropy -sum y log p (target renormalized), averaged over the batch."""
    y = _normalized_target(target)
    logp = ops.log(p)
    n = int(np.prod(p.shape[:-2])) if p.value.ndim > 2 else 1
    return ops.scale(ops.sum_all(ops.mul(logp, Tensor(y.reshape(p.shape)))), -1.0 / n)


def disc_loss_from_logits(logits: Tensor, target) -> Tensor:
    """Same value as ``disc_loss(softmax(logits), target)`` via log-softmax."""
    y = _normalized_target(target)
    logp = ops.log_softmax_rows(logits)
    n = int(np.prod(logits.shape[:-2])) if logits.value.ndim > 2 else 1
    return ops.scale(ops.sum_all(ops.mul(logp, Tensor(y.reshape(logits.shape)))), -1.0 / n)


# ---------------------------------------------------------------------------
# Generative decoder
# ---------------------------------------------------------------------------

@dataclass
class LstmLayer:
    w_x: Parameter
    w_h: Parameter
    b: Parameter

    def parameters(self) -> list[Parameter]:
        return [self.w_x, self.w_h, self.b]


@dataclass
class GenDecoderParams:
    embedding: Parameter
    layers: list[LstmLayer]
    w_out: Parameter
    b_out: Parameter
    sos: int

    @property
    def vocab_size(self) -> int:
        return self.embedding.rows

    @property
    def hidden(self) -> int:
        return self.w_out.rows

    def parameters(self) -> list[Parameter]:
        out = [self.embedding]
        for layer in self.layers:
            out.extend(layer.parameters())
        return out + [self.w_out, self.b_out]


def init_gen_decoder(
    vocab_size: int,
    d: int,
    rng: np.random.Generator,
    embed_width: int | None = None,
    n_layers: int = 2,
    sos: int | None = None,
    prefix: str = "gen",
) -> GenDecoderParams:
    """Two-layer LSTM decoder; forget-gate bias starts at 1."""
    e = embed_width or d
    layers = []
    for i in range(n_layers):
        fan_in = e if i == 0 else d
        b = np.zeros((1, 4 * d))
        b[0, d:2 * d] = 1.0
        layers.append(LstmLayer(
            w_x=Parameter(f"{prefix}.l{i}.w_x", rng.normal(0.0, math.sqrt(1.0 / fan_in), (fan_in, 4 * d))),
            w_h=Parameter(f"{prefix}.l{i}.w_h", rng.normal(0.0, math.sqrt(1.0 / d), (d, 4 * d))),
            b=Parameter(f"{prefix}.l{i}.b", b),
        ))
    return GenDecoderParams(
        embedding=Parameter(f"{prefix}.embedding", rng.normal(0.0, 1.0, (vocab_size, e))),
        layers=layers,
        w_out=Parameter(f"{prefix}.w_out", rng.normal(0.0, math.sqrt(1.0 / d), (d, vocab_size))),
        b_out=Parameter(f"{prefix}.b_out", np.zeros((1, vocab_size))),
        sos=vocab_size - 1 if sos is None else sos,
    )


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, layer: LstmLayer):
    """Gates ordered (input, forget, candidate, output).

    i = s(.), f = s(.), g = tanh(.), o = s(.);  c' = f*c + i*g;  h' = o*tanh(c')
    """
    d = h.cols
    z = ops.add(ops.add(ops.matmul(x, layer.w_x), ops.matmul(h, layer.w_h)), layer.b)
    i = ops.sigmoid(ops.slice_cols(z, 0, d))
    f = ops.sigmoid(ops.slice_cols(z, d, 2 * d))
    g = ops.tanh(ops.slice_cols(z, 2 * d, 3 * d))
    o = ops.sigmoid(ops.slice_cols(z, 3 * d, 4 * d))
    c_new = ops.add(ops.mul(f, c), ops.mul(i, g))
    h_new = ops.mul(o, ops.tanh(c_new))
    return h_new, c_new


def gen_forward(
    params: GenDecoderParams,
    c: Tensor,
    tokens: np.ndarray,
    rng: np.random.Generator | None = None,
    training: bool = False,
    dropout_rate: float = 0.1,
    return_dists: bool = False,
):
    """Teacher-forced pass; returns per-step log-likelihoods of the reference tokens.

    ``c`` is (N, 1, d) and ``tokens`` (N, T+1) starting with the start token.
    The result has shape (N, 1, T). Every layer's hidden state starts at ``c``
    and its cell state at zero.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2 or tokens.shape[1] < 2:
        raise ShapeError(f"tokens must be (N, T+1) with T >= 1, got {tokens.shape}")
    if tokens.min() < 0 or tokens.max() >= params.vocab_size:
        raise ValueError(f"token id out of range for vocabulary of {params.vocab_size}")
    if np.any(tokens[:, 0] != params.sos):
        raise ValueError("every sequence must begin with the start token")
    c = as_tensor(c)
    if c.value.ndim == 2:
        c = ops.reshape(c, (1,) + c.shape)
    n = tokens.shape[0]
    if c.shape[0] != n:
        raise ShapeError(f"{c.shape[0]} context vectors for {n} sequences")
    d = params.hidden
    hs = [c] * len(params.layers)
    cs = [Tensor(np.zeros((n, 1, d)))] * len(params.layers)
    steps, dists = [], []
    for t in range(tokens.shape[1] - 1):
        inp = ops.embed(params.embedding, tokens[:, t])
        for li, layer in enumerate(params.layers):
            if li > 0:
                inp = ops.dropout(inp, dropout_rate, rng, training)
            hs[li], cs[li] = lstm_cell(inp, hs[li], cs[li], layer)
            inp = hs[li]
        logp = ops.log_softmax_rows(ops.linear(inp, params.w_out, params.b_out))
        if return_dists:
            dists.append(logp.value[:, 0, :])
        steps.append(ops.pick(logp, tokens[:, t + 1][:, None]))
    out = ops.concat_cols(steps) if len(steps) > 1 else steps[0]
    return (out, dists) if return_dists else out


def gen_loss(log_probs: Tensor) -> Tensor:
    """Summed negative log-likelihood per sequence, averaged over sequences."""
    n = log_probs.shape[0] if log_probs.value.ndim > 2 else 1
    return ops.scale(ops.sum_all(log_probs), -1.0 / n)


def gen_score(params: GenDecoderParams, c: Tensor, cand_tokens: np.ndarray) -> np.ndarray:
    """Log-likelihood sum of every candidate sequence: (B, C, T+1) -> (B, C)."""
    cand_tokens = np.asarray(cand_tokens, dtype=np.int64)
    if cand_tokens.ndim == 2:
        cand_tokens = cand_tokens[None]
    b, n_cand, length = cand_tokens.shape
    c = as_tensor(c)
    if c.value.ndim == 2:
        c = Tensor(c.value[None])
    reps = ops.repeat_batch(c, n_cand)
    lp = gen_forward(params, reps, cand_tokens.reshape(b * n_cand, length))
    return lp.value.sum(axis=-1).reshape(b, n_cand)


def gen_rank(scores: np.ndarray) -> np.ndarray:
    return softmax_np(np.asarray(scores, dtype=np.float64), axis=-1)


def multitask_loss(disc: Tensor, gen: Tensor) -> Tensor:
    """Unweighted sum of the two decoder losses."""
    return ops.add(disc, gen)


def average_scores(p_disc: np.ndarray, p_gen: np.ndarray) -> np.ndarray:
    p_disc, p_gen = np.asarray(p_disc, dtype=np.float64), np.asarray(p_gen, dtype=np.float64)
    if p_disc.shape != p_gen.shape:
        raise ValueError(f"score shapes differ: {p_disc.shape} vs {p_gen.shape}")
    return 0.5 * (p_disc + p_gen)
