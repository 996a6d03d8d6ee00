"""Closed-form and enumerated parameter counts.

The proposed layer is U blocks, each owning a (U'd x d) projection, a bias
and a layer-norm gain/bias (U' = U with self-attention, U-1 without). The
naive baseline is one full Transformer block per ordered utility pair,
self pairs included: U^2 blocks of multi-head attention (4d^2 + 4d), a
feed-forward sublayer of width ``ffn_multiplier * d`` and two layer norms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .tensor import ConfigError, Parameter

REFERENCE_PROPOSED = 2.38e6
REFERENCE_NAIVE = 28.4e6


@dataclass
class CountBreakdown:
    components: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.components.values())


def count_proposed_layer(u: int, d: int, self_attention: bool = True) -> CountBreakdown:
    if u < 1 or d < 1:
        raise ConfigError(f"need u >= 1 and d >= 1, got u={u}, d={d}")
    inputs = u if self_attention else u - 1
    return CountBreakdown({
        "aggregation_weights": u * inputs * d * d,
        "aggregation_biases": u * d,
        "layer_norms": u * 2 * d,
    })


def count_naive_layer(u: int, d: int, h: int, ffn_multiplier: int = 4) -> CountBreakdown:
    if h < 1 or d % h:
        raise ConfigError(f"h={h} does not divide d={d}")
    blocks = u * u
    f = ffn_multiplier
    return CountBreakdown({
        "attention_weights": blocks * 4 * d * d,
        "attention_biases": blocks * 4 * d,
        "feed_forward_weights": blocks * 2 * f * d * d,
        "feed_forward_biases": blocks * (f + 1) * d,
        "layer_norms": blocks * 4 * d,
    })


def count_encoder(u: int, d: int, l: int, self_attention: bool = True, shared: bool = False) -> int:
    """Closed form for the stacked blocks (pad rows excluded)."""
    layers = 1 if shared else l
    return layers * count_proposed_layer(u, d, self_attention).total


def count_model(params: Iterable[Parameter]) -> tuple[int, dict[str, int]]:
    """Sum of trainable sizes, each parameter object counted once."""
    per_name: dict[str, int] = {}
    seen: set[int] = set()
    for p in params:
        if id(p) in seen:
            continue
        seen.add(id(p))
        if p.name in per_name:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        if p.trainable:
            per_name[p.name] = p.size
    return sum(per_name.values()), per_name


def comparison_rows(configs: Iterable[tuple[int, int, int, bool]]) -> list[dict]:
    rows = []
    for u, d, h, self_attention in configs:
        prop = count_proposed_layer(u, d, self_attention).total
        naive = count_naive_layer(u, d, h).total
        rows.append({
            "config": f"U={u} d={d} H={h}" + ("" if self_attention else " no-self"),
            "proposed_total": prop,
            "naive_total": naive,
            "ratio": prop / naive,
        })
    return rows
