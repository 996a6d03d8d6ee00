from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import decoder as dec
from .encoder import EncoderConfig, EncoderParams, UtilitySet, build_encoder, encoder_forward
from .tensor import ConfigError, Parameter, Tensor
from .task import EpisodeBatch

ROLES = ("V", "Q", "R")
DECODERS = ("disc", "gen", "both")


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoders: str = "both"
    aggregation: str = "QV"
    vocab_size: int = 33
    embed_width: int | None = None
    decoder_dropout: float = 0.1

    def validate(self) -> "ModelConfig":
        self.encoder.validate()
        if self.encoder.u != len(ROLES):
            raise ConfigError(f"the V/Q/R model needs u=3, got u={self.encoder.u}")
        if self.decoders not in DECODERS:
            raise ConfigError(f"decoders must be one of {DECODERS}, got {self.decoders!r}")
        if self.aggregation not in dec.AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {sorted(dec.AGGREGATIONS)}")
        return self

    @property
    def has_disc(self) -> bool:
        return self.decoders in ("disc", "both")

    @property
    def has_gen(self) -> bool:
        return self.decoders in ("gen", "both")


class Model:
    """Encoder, context pooling and the configured decoder(s)."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg.validate()
        d = cfg.encoder.d
        self.encoder: EncoderParams = build_encoder(cfg.encoder, rng, roles=ROLES)
        self.pooled_roles = dec.AGGREGATIONS[cfg.aggregation]
        self.context_heads = {r: dec.init_context_head(d, rng, prefix=f"ctx.{r}") for r in self.pooled_roles}
        self.fusion = dec.init_fusion(d, rng, cfg.aggregation)
        self.gen = (
            dec.init_gen_decoder(cfg.vocab_size, d, rng, embed_width=cfg.embed_width)
            if cfg.has_gen else None
        )

    def parameters(self) -> list[Parameter]:
        params = self.encoder.parameters()
        for r in self.pooled_roles:
            params += self.context_heads[r].parameters()
        params += self.fusion.parameters()
        if self.gen is not None:
            params += self.gen.parameters()
        return params

    def utilities(self, batch: EpisodeBatch) -> UtilitySet:
        return UtilitySet([Tensor(batch.v), Tensor(batch.q), Tensor(batch.r)], list(ROLES))

    def encode(self, batch: EpisodeBatch, rng=None, training=False, record_attention=False):
        """Context vectors (B, 1, d) plus the pooling weights per role."""
        out = encoder_forward(
            self.encoder, self.utilities(batch), self.cfg.encoder, rng, training, record_attention
        )
        contexts, pools = [], {}
        for role in self.pooled_roles:
            c, a = dec.context_vector(out[role], self.context_heads[role], out.masks[ROLES.index(role)])
            contexts.append(c)
            pools[role] = a
        return dec.fuse_context(contexts, self.fusion), pools

    def loss(self, batch: EpisodeBatch, rng=None, training=False, soft_targets=False):
        """Multi-task loss and its parts as floats."""
        c, _ = self.encode(batch, rng, training)
        parts = {}
        total = None
        if self.cfg.has_disc:
            target = batch.relevance if soft_targets else _one_hot(batch.gt_index, batch.candidates.shape[1])
            ld = dec.disc_loss_from_logits(dec.disc_logits(c, batch.candidates), target)
            parts["disc"] = ld.item()
            total = ld
        if self.cfg.has_gen:
            gt_tokens = batch.tokens[np.arange(len(batch)), batch.gt_index]
            lp = dec.gen_forward(self.gen, c, gt_tokens, rng, training, self.cfg.decoder_dropout)
            lg = dec.gen_loss(lp)
            parts["gen"] = lg.item()
            total = lg if total is None else dec.multitask_loss(total, lg)
        return total, parts

    def score(self, batch: EpisodeBatch, mode: str = "disc") -> np.ndarray:
        """Candidate probabilities (B, C) from the requested decoder path."""
        if mode not in ("disc", "gen", "avg"):
            raise ConfigError(f"unknown evaluation mode {mode!r}")
        if mode in ("disc", "avg") and not self.cfg.has_disc:
            raise ConfigError(f"mode {mode!r} needs the discriminative decoder, model has {self.cfg.decoders!r}")
        if mode in ("gen", "avg") and not self.cfg.has_gen:
            raise ConfigError(f"mode {mode!r} needs the generative decoder, model has {self.cfg.decoders!r}")
        c, _ = self.encode(batch)
        p_disc = dec.disc_scores(c, batch.candidates).value[:, 0, :] if mode != "gen" else None
        p_gen = dec.gen_rank(dec.gen_score(self.gen, c, batch.tokens)) if mode != "disc" else None
        if mode == "disc":
            return p_disc
        if mode == "gen":
            return p_gen
        return dec.average_scores(p_disc, p_gen)


def _one_hot(idx: np.ndarray, n: int) -> np.ndarray:
    y = np.zeros((len(idx), n))
    y[np.arange(len(idx)), idx] = 1.0
    return y
