"""Synthetic three-utility retrieval task.

Each episode has an image-like utility V (K_v x d), a question-like utility
Q (N_q x d) and a history-like utility R (T_r x d). One question row is a
pointer: a marked copy of V[i_v] + R[i_r]. The correct answer is the
normalized sum of those two rows. One near-duplicate candidate (relevance
0.5) shares the V row but takes a different R row. The remaining
distractors pair rows that are both not indexed. Answering therefore
requires locating the pointer row and resolving what it refers to in V
and R.

Every episode is a pure function of ``(config, split, index)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import add_positional
from .tensor import ConfigError, make_rng

SPLITS = {"train": 0, "val": 1, "test": 2}
_CONSTANTS_STREAM = 7919


@dataclass
class TaskConfig:
    k_v: int = 12
    n_q: int = 8
    t_r: int = 6
    d: int = 64
    n_candidates: int = 20
    n_train: int = 5000
    n_val: int = 500
    n_test: int = 500
    noise: float = 0.3
    seed: int = 0
    answer_tokens: int = 4
    token_bits: int = 5
    soft_targets: bool = False
    use_positional_embedding: bool = True

    def validate(self) -> "TaskConfig":
        problems = []
        if self.n_candidates < 2:
            problems.append("n_candidates must be >= 2")
        for name in ("k_v", "n_q", "t_r", "d", "n_train", "n_val", "n_test", "answer_tokens", "token_bits"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.noise < 0:
            problems.append("noise must be >= 0")
        if self.use_positional_embedding and self.d % 2:
            problems.append("positional embedding needs an even d")
        if problems:
            raise ConfigError("invalid task config: " + "; ".join(problems))
        return self

    @property
    def vocab_size(self) -> int:
        """Answer tokens plus one start token (the last id)."""
        return 2 ** self.token_bits + 1

    @property
    def sos(self) -> int:
        return 2 ** self.token_bits

    def split_size(self, split: str) -> int:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}[split]


@dataclass
class Episode:
    v: np.ndarray
    q: np.ndarray
    r: np.ndarray
    candidates: np.ndarray
    tokens: np.ndarray
    gt_index: int
    relevance: np.ndarray
    planted: dict = field(default_factory=dict)


@dataclass
class EpisodeBatch:
    v: np.ndarray
    q: np.ndarray
    r: np.ndarray
    candidates: np.ndarray
    tokens: np.ndarray
    gt_index: np.ndarray
    relevance: np.ndarray
    planted_v: np.ndarray
    planted_r: np.ndarray
    pointer_row: np.ndarray

    def __len__(self) -> int:
        return self.v.shape[0]

    def take(self, idx) -> "EpisodeBatch":
        idx = np.asarray(idx)
        return EpisodeBatch(**{k: getattr(self, k)[idx] for k in self.__dataclass_fields__})


def _unit_rows(x: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance rows."""
    x = x - x.mean(axis=-1, keepdims=True)
    return x / np.sqrt((x * x).mean(axis=-1, keepdims=True) + 1e-12)


def task_constants(cfg: TaskConfig) -> tuple[np.ndarray, np.ndarray]:
    """(pointer marker (d,), token projections (answer_tokens, token_bits, d))."""
    rng = make_rng([cfg.seed, _CONSTANTS_STREAM])
    marker = rng.normal(size=cfg.d)
    proj = rng.normal(size=(cfg.answer_tokens, cfg.token_bits, cfg.d))
    return marker, proj


def answer_tokens(vectors: np.ndarray, proj: np.ndarray, sos: int) -> np.ndarray:
    """Sign-pattern bucketing: token t = sum_b 2^b [a . proj[t, b] > 0]."""
    bits = (np.einsum("...d,tbd->...tb", vectors, proj) > 0).astype(np.int64)
    toks = (bits << np.arange(proj.shape[1])).sum(axis=-1)
    start = np.full(toks.shape[:-1] + (1,), sos, dtype=np.int64)
    return np.concatenate([start, toks], axis=-1)


def gen_episode(cfg: TaskConfig, index: int, split: str = "train", constants=None) -> Episode:
    cfg.validate()
    n_distract = cfg.n_candidates - 2
    available = (cfg.k_v - 1) * (cfg.t_r - 1)
    if n_distract > available:
        raise ValueError(
            f"{cfg.n_candidates} candidates need {n_distract} distractors but only {available} are constructible"
        )
    if cfg.t_r < 2:
        raise ValueError("t_r must be >= 2 to build a near-duplicate candidate")
    marker, proj = constants if constants is not None else task_constants(cfg)
    rng = make_rng([cfg.seed, SPLITS[split], index])
    d = cfg.d

    v = _unit_rows(rng.normal(size=(cfg.k_v, d)))
    r = rng.normal(size=(cfg.t_r, d))
    q = rng.normal(size=(cfg.n_q, d))
    if cfg.use_positional_embedding:
        r = add_positional(r)
        q = add_positional(q)
    else:
        r = _unit_rows(r)
        q = _unit_rows(q)

    iv = int(rng.integers(cfg.k_v))
    ir = int(rng.integers(cfg.t_r))
    row = int(rng.integers(cfg.n_q))
    q[row] = _unit_rows(v[iv] + r[ir] + marker)

    others = [(a, b) for a in range(cfg.k_v) if a != iv for b in range(cfg.t_r) if b != ir]
    picks = rng.choice(len(others), size=n_distract, replace=False)
    alt_r = int(rng.choice([b for b in range(cfg.t_r) if b != ir]))
    pairs = [(iv, ir), (iv, alt_r)] + [others[i] for i in picks]
    rel = np.zeros(cfg.n_candidates)
    rel[0], rel[1] = 1.0, 0.5

    cands = np.stack([v[a] + r[b] for a, b in pairs])
    cands = cands / np.linalg.norm(cands, axis=-1, keepdims=True) * np.sqrt(d)
    cands = cands + cfg.noise * rng.normal(size=cands.shape)

    perm = rng.permutation(cfg.n_candidates)
    cands, rel = cands[perm], rel[perm]
    gt = int(np.flatnonzero(perm == 0)[0])
    return Episode(
        v=v, q=q, r=r,
        candidates=cands,
        tokens=answer_tokens(cands, proj, cfg.sos),
        gt_index=gt,
        relevance=rel,
        planted={"v": iv, "r": ir, "row": row},
    )


def make_split(cfg: TaskConfig, split: str, n: int | None = None, start: int = 0) -> EpisodeBatch:
    n = cfg.split_size(split) if n is None else n
    consts = task_constants(cfg)
    eps = [gen_episode(cfg, start + i, split, consts) for i in range(n)]
    return EpisodeBatch(
        v=np.stack([e.v for e in eps]),
        q=np.stack([e.q for e in eps]),
        r=np.stack([e.r for e in eps]),
        candidates=np.stack([e.candidates for e in eps]),
        tokens=np.stack([e.tokens for e in eps]),
        gt_index=np.array([e.gt_index for e in eps]),
        relevance=np.stack([e.relevance for e in eps]),
        planted_v=np.array([e.planted["v"] for e in eps]),
        planted_r=np.array([e.planted["r"] for e in eps]),
        pointer_row=np.array([e.planted["row"] for e in eps]),
    )


def oracle_scores(batch: EpisodeBatch) -> np.ndarray:
    """Candidate scores of a cheater that knows the planted indices."""
    b = np.arange(len(batch))
    target = batch.v[b, batch.planted_v] + batch.r[b, batch.planted_r]
    return np.einsum("bcd,bd->bc", batch.candidates, target)
