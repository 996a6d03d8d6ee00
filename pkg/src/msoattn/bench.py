"""Forward-pass timing: proposed layer versus one Transformer block per utility pair."""

from __future__ import annotations

import math
import os
import platform
import time
from dataclasses import dataclass

import numpy as np

from .attention import init_block_params, mso_block, paired_attention, simplified_attention
from .ops import LN_EPS, softmax_np
from .tensor import make_rng

MIN_REPS = 25


def machine_descriptor() -> str:
    return (
        f"{platform.system()} {platform.release()} {platform.machine()}; "
        f"cpus={os.cpu_count()}; python={platform.python_version()}; numpy={np.__version__}"
    )


def _ln(x):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS)


@dataclass
class NaiveBlock:
    """Post-norm Transformer block with learned attention projections and a 4x FFN."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    b_attn: np.ndarray  # (4, d)
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    ln: np.ndarray  # (4, d): gain1, bias1, gain2, bias2

    @property
    def size(self) -> int:
        return sum(a.size for a in self.__dict__.values())


def init_naive_block(d: int, rng: np.random.Generator, ffn_multiplier: int = 4) -> NaiveBlock:
    s = 1.0 / math.sqrt(d)
    f = ffn_multiplier * d
    return NaiveBlock(
        *(rng.normal(0, s, (d, d)) for _ in range(4)),
        b_attn=np.zeros((4, d)),
        w1=rng.normal(0, s, (d, f)),
        b1=np.zeros(f),
        w2=rng.normal(0, 1.0 / math.sqrt(f), (f, d)),
        b2=np.zeros(d),
        ln=np.array([np.ones(d), np.zeros(d), np.ones(d), np.zeros(d)]),
    )


def naive_block_forward(x: np.ndarray, y: np.ndarray, p: NaiveBlock, h: int) -> np.ndarray:
    """Target ``x`` attends to source ``y``; residual, LN, FFN, residual, LN."""
    d = x.shape[-1]
    dh = d // h
    q = (x @ p.wq + p.b_attn[0]).reshape(-1, h, dh).transpose(1, 0, 2)
    k = (y @ p.wk + p.b_attn[1]).reshape(-1, h, dh).transpose(1, 0, 2)
    v = (y @ p.wv + p.b_attn[2]).reshape(-1, h, dh).transpose(1, 0, 2)
    w = softmax_np(q @ k.transpose(0, 2, 1) / math.sqrt(dh), axis=-1)
    att = (w @ v).transpose(1, 0, 2).reshape(-1, d) @ p.wo + p.b_attn[3]
    z = _ln(x + att) * p.ln[0] + p.ln[1]
    ff = np.maximum(z @ p.w1 + p.b1, 0.0) @ p.w2 + p.b2
    return _ln(z + ff) * p.ln[2] + p.ln[3]


def naive_layer_forward(xs, blocks, h: int):
    """U^2 blocks; the U outputs for one target are summed."""
    u = len(xs)
    return [sum(naive_block_forward(xs[i], xs[j], blocks[i][j], h) for j in range(u)) for i in range(u)]


def proposed_layer_forward(xs, blocks, h: int):
    u = len(xs)
    return [
        mso_block(xs[i], [xs[j] for j in range(u) if j != i], blocks[i], h).value
        for i in range(u)
    ]


def median_time(fn, reps: int = MIN_REPS) -> float:
    """Median wall-clock seconds over ``reps`` calls, after one warm-up call."""
    reps = max(reps, MIN_REPS)
    fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


@dataclass
class BenchRow:
    u: int
    d: int
    h: int
    n: int
    proposed_ms: float
    naive_ms: float
    reps: int

    @property
    def ratio(self) -> float:
        return self.proposed_ms / self.naive_ms


def bench(u: int, d: int, h: int, sizes, reps: int = MIN_REPS, seed: int = 0) -> list[BenchRow]:
    """Timing table; each utility has ``n`` entities for every ``n`` in ``sizes``."""
    rng = make_rng(seed)
    prop = [init_block_params(u, d, rng, prefix=f"b{i}") for i in range(u)]
    naive = [[init_naive_block(d, rng) for _ in range(u)] for _ in range(u)]
    rows = []
    for n in sizes:
        xs = [rng.normal(size=(n, d)) for _ in range(u)]
        t_p = median_time(lambda: proposed_layer_forward(xs, prop, h), reps)
        t_n = median_time(lambda: naive_layer_forward(xs, naive, h), reps)
        rows.append(BenchRow(u, d, h, n, 1e3 * t_p, 1e3 * t_n, max(reps, MIN_REPS)))
    return rows


def bench_csv(rows: list[BenchRow]) -> str:
    lines = [f"# machine: {machine_descriptor()}", "u,d,h,n,proposed_ms,naive_ms,ratio,reps"]
    for r in rows:
        lines.append(f"{r.u},{r.d},{r.h},{r.n},{r.proposed_ms:.4f},{r.naive_ms:.4f},{r.ratio:.4f},{r.reps}")
    return "\n".join(lines) + "\n"


def paired_timing(m: int = 256, n: int = 256, d: int = 512, h: int = 4,
                  reps: int = MIN_REPS, seed: int = 0) -> tuple[float, float]:
    """Median seconds of (paired_attention, two simplified_attention calls)."""
    rng = make_rng(seed)
    x = rng.normal(size=(m, d))
    y = rng.normal(size=(n, d))
    t_pair = median_time(lambda: paired_attention(x, y, h), reps)
    t_two = median_time(lambda: (simplified_attention(x, y, h), simplified_attention(y, x, h)), reps)
    return t_pair, t_two
