"""Stacks of many-source-one-target blocks over U utilities."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import ops
from .attention import AttentionRecord, BlockParams, init_block_params, init_pads, mso_block
from .tensor import ConfigError, Parameter, ShapeError, StateError, Tensor, as_tensor


@dataclass
class EncoderConfig:
    u: int = 3
    d: int = 512
    h: int = 4
    l: int = 2
    use_self_attention: bool = True
    share_weights_across_stacks: bool = False
    dropout_rate: float = 0.1
    use_positional_embedding: bool = True

    def validate(self) -> "EncoderConfig":
        problems = []
        if self.u < 1:
            problems.append(f"u={self.u} must be >= 1")
        if self.d < 1:
            problems.append(f"d={self.d} must be >= 1")
        if self.h < 1 or self.d % self.h:
            problems.append(f"h={self.h} must divide d={self.d}")
        if self.l < 1:
            problems.append(f"l={self.l} must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            problems.append(f"dropout_rate={self.dropout_rate} must be in [0, 1)")
        if self.u == 1 and not self.use_self_attention:
            problems.append("u=1 without self-attention leaves a block nothing to attend to")
        if problems:
            raise ConfigError("invalid encoder config: " + "; ".join(problems))
        return self

    @property
    def inputs_per_block(self) -> int:
        return self.u if self.use_self_attention else self.u - 1

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "EncoderConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown encoder config keys: {unknown}")
        return cls(**doc).validate()

    @classmethod
    def from_json(cls, text: str) -> "EncoderConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class UtilitySet:
    """Ordered utilities, each (..., entities, d), with optional entity masks."""

    values: list[Tensor]
    roles: list[str]
    masks: list[np.ndarray | None] = field(default_factory=list)

    def __post_init__(self):
        self.values = [as_tensor(v) for v in self.values]
        if not self.masks:
            self.masks = [None] * len(self.values)
        if not (len(self.values) == len(self.roles) == len(self.masks)):
            raise ShapeError("values, roles and masks must have equal length")

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, role: str) -> Tensor:
        return self.values[self.roles.index(role)]

    @property
    def width(self) -> int:
        return self.values[0].cols


@dataclass
class EncoderParams:
    """``blocks[stack][utility]``; with sharing every stack holds the same objects."""

    blocks: list[list[BlockParams]]
    pads: list[Parameter]
    roles: list[str]
    last_record: AttentionRecord | None = None

    def block_parameters(self) -> list[Parameter]:
        seen: dict[int, Parameter] = {}
        for stack in self.blocks:
            for blk in stack:
                for p in blk.parameters():
                    seen.setdefault(id(p), p)
        return list(seen.values())

    def parameters(self) -> list[Parameter]:
        return self.block_parameters() + list(self.pads)


def build_encoder(cfg: EncoderConfig, rng: np.random.Generator, roles: Sequence[str] | None = None) -> EncoderParams:
    cfg.validate()
    roles = list(roles) if roles is not None else [f"u{i}" for i in range(cfg.u)]
    if len(roles) != cfg.u:
        raise ConfigError(f"{len(roles)} role labels for u={cfg.u}")
    n_alloc = 1 if cfg.share_weights_across_stacks else cfg.l
    allocated = [
        [init_block_params(cfg.inputs_per_block, cfg.d, rng, prefix=f"enc.s{s}.{r}") for r in roles]
        for s in range(n_alloc)
    ]
    blocks = allocated * cfg.l if cfg.share_weights_across_stacks else allocated
    pads = [init_pads(cfg.d, rng, name=f"enc.pad.{r}") for r in roles]
    return EncoderParams(blocks=blocks, pads=pads, roles=roles)


def encoder_forward(
    params: EncoderParams,
    utilities: UtilitySet,
    cfg: EncoderConfig,
    rng: np.random.Generator | None = None,
    training: bool = False,
    record_attention: bool = False,
) -> UtilitySet:
    """Run all stacks; every block of a stack reads that stack's inputs."""
    if len(utilities) != cfg.u:
        raise ShapeError(f"encoder built for {cfg.u} utilities, got {len(utilities)}")
    for role, v in zip(utilities.roles, utilities.values):
        if v.cols != cfg.d:
            raise ShapeError(f"utility {role} has width {v.cols}, encoder expects {cfg.d}")
    rec = AttentionRecord() if record_attention else None
    current = list(utilities.values)
    masks = utilities.masks
    roles = utilities.roles
    for s, stack in enumerate(params.blocks):
        nxt = []
        for t in range(cfg.u):
            order = ([t] if cfg.use_self_attention else []) + [j for j in range(cfg.u) if j != t]

            def keep(i, w, s=s, t=t, order=order):
                rec.add(s, roles[t], roles[order[i]], w)

            nxt.append(mso_block(
                current[t],
                [current[j] for j in order if j != t],
                stack[t],
                cfg.h,
                rng,
                training,
                dropout_rate=cfg.dropout_rate,
                self_attention=cfg.use_self_attention,
                pads=[params.pads[j] for j in order],
                key_masks=[masks[j] for j in order],
                on_weights=keep if rec is not None else None,
            ))
        current = nxt
    if rec is not None:
        params.last_record = rec
    return UtilitySet(current, list(roles), list(masks))


def positional_embedding(n: int, d: int) -> np.ndarray:
    """Sinusoidal table: pe[i, 2j] = sin(i / 10000^(2j/d)), pe[i, 2j+1] = cos(...)."""
    if d % 2:
        raise ConfigError(f"positional embedding needs an even width, got {d}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((n, d))
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return pe


def add_positional(x: np.ndarray) -> np.ndarray:
    """LayerNorm(x + pe) without affine, applied once when a utility is built."""
    z = x + positional_embedding(x.shape[-2], x.shape[-1])
    d = x.shape[-1]
    one, zero = Tensor(np.ones((1, d))), Tensor(np.zeros((1, d)))
    return ops.layer_norm(Tensor(z), one, zero).value


def collect_attention(
    params: EncoderParams,
    utilities: UtilitySet | None = None,
    cfg: EncoderConfig | None = None,
) -> dict[tuple[int, str, str], np.ndarray]:
    """Head-averaged attention maps keyed by (stack, target role, source role).

    With ``utilities`` and ``cfg`` an inference pass is run first; otherwise
    the record of the last recorded forward pass is used.
    """
    if utilities is not None:
        if cfg is None:
            raise ConfigError("collect_attention needs cfg to run a forward pass")
        encoder_forward(params, utilities, cfg, training=False, record_attention=True)
    if params.last_record is None:
        raise StateError("no recorded forward pass; run encoder_forward(record_attention=True) first")
    return params.last_record.head_average()
