from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import MetricsReport, aggregate, episode_metrics
from .model import Model, ModelConfig
from .gradcheck import grad_check_by_param
from .optim import Adam
from .task import EpisodeBatch, TaskConfig, make_split
from .tensor import ConfigError, Tape, make_rng

log = logging.getLogger(__name__)


@dataclass
class TrainSchedule:
    """Linear warm-up over the first epoch, then halving every ``halving_period`` epochs."""

    warmup_start: float = 1e-5
    warmup_end: float = 1e-3
    halving_period: int = 2
    epochs: int = 8
    batch_size: int = 32

    def validate(self) -> "TrainSchedule":
        if self.warmup_end < self.warmup_start or self.warmup_start <= 0:
            raise ConfigError("need 0 < warmup_start <= warmup_end")
        if self.halving_period < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("halving_period, epochs and batch_size must be >= 1")
        return self

    def lr(self, epoch: int, step: int, steps_per_epoch: int) -> float:
        """Learning rate at ``step`` of 1-based ``epoch``."""
        if epoch == 1:
            if steps_per_epoch <= 1:
                return self.warmup_end
            frac = step / (steps_per_epoch - 1)
            return self.warmup_start + (self.warmup_end - self.warmup_start) * frac
        return self.warmup_end * 0.5 ** ((epoch - 2) // self.halving_period)


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, step: int, history: list[float]):
        self.epoch, self.step, self.history = epoch, step, history
        tail = ", ".join(f"{x:.4g}" for x in history[-5:])
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}; last losses: [{tail}]")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    probe_loss: float
    lr: float
    report: MetricsReport


@dataclass
class TrainResult:
    model: Model
    history: list[EpochRecord] = field(default_factory=list)

    @property
    def final(self) -> MetricsReport:
        return self.history[-1].report


def evaluate(model: Model, episodes: EpisodeBatch, mode: str = "disc", chunk: int = 100) -> MetricsReport:
    per = []
    for start in range(0, len(episodes), chunk):
        part = episodes.take(np.arange(start, min(start + chunk, len(episodes))))
        probs = model.score(part, mode)
        for i in range(len(part)):
            per.append(episode_metrics(probs[i], int(part.gt_index[i]), part.relevance[i]))
    return aggregate(per)


def probe_loss(model: Model, episodes: EpisodeBatch, soft_targets: bool = False, chunk: int = 128) -> float:
    total, n = 0.0, 0
    for start in range(0, len(episodes), chunk):
        part = episodes.take(np.arange(start, min(start + chunk, len(episodes))))
        loss, _ = model.loss(part, soft_targets=soft_targets)
        total += loss.item() * len(part)
        n += len(part)
    return total / n


def train(
    model_cfg: ModelConfig,
    task_cfg: TaskConfig,
    schedule: TrainSchedule,
    seed: int = 0,
    eval_mode: str = "disc",
    data: dict[str, EpisodeBatch] | None = None,
) -> TrainResult:
    """Adam training; one metrics row per epoch on the validation split (epoch 0 = untrained)."""
    task_cfg.validate()
    schedule.validate()
    data = data or {}
    train_set = data["train"] if "train" in data else make_split(task_cfg, "train")
    val_set = data["val"] if "val" in data else make_split(task_cfg, "val")
    probe = train_set.take(np.arange(min(256, len(train_set))))

    rng = make_rng(seed)
    model = Model(model_cfg, rng)
    opt = Adam(model.parameters())
    result = TrainResult(model)
    result.history.append(EpochRecord(
        0, math.nan, probe_loss(model, probe, task_cfg.soft_targets), 0.0, evaluate(model, val_set, eval_mode)
    ))

    steps = math.ceil(len(train_set) / schedule.batch_size)
    losses: list[float] = []
    for epoch in range(1, schedule.epochs + 1):
        order = rng.permutation(len(train_set))
        epoch_losses = []
        lr = 0.0
        for step in range(steps):
            batch = train_set.take(order[step * schedule.batch_size:(step + 1) * schedule.batch_size])
            opt.zero_grad()
            with Tape() as tape:
                loss, _ = model.loss(batch, rng, training=True, soft_targets=task_cfg.soft_targets)
            value = loss.item()
            losses.append(value)
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, step, losses)
            tape.backward(loss)
            lr = schedule.lr(epoch, step, steps)
            opt.step(lr)
            epoch_losses.append(value)
        rec = EpochRecord(
            epoch,
            float(np.mean(epoch_losses)),
            probe_loss(model, probe, task_cfg.soft_targets),
            lr,
            evaluate(model, val_set, eval_mode),
        )
        log.info("epoch %d loss %.4f NDCG %.2f R@1 %.2f", epoch, rec.train_loss, rec.report.ndcg, rec.report.r1)
        result.history.append(rec)
    return result


def history_csv(history: list[EpochRecord]) -> str:
    lines = ["epoch,train_loss,probe_loss,lr,NDCG,MRR,R@1,R@5,R@10,Mean"]
    for h in history:
        tl = "" if math.isnan(h.train_loss) else f"{h.train_loss:.6f}"
        lines.append(",".join([str(h.epoch), tl, f"{h.probe_loss:.6f}", f"{h.lr:.6g}", *h.report.row()]))
    return "\n".join(lines) + "\n"


def model_grad_check(
    model_cfg: ModelConfig,
    task_cfg: TaskConfig,
    seed: int = 0,
    n_episodes: int = 2,
    max_entries: int | None = 8,
    eps: float = 1e-5,
) -> dict[str, float]:
    """Per-parameter worst relative error of the full training loss.

    Dropout stays active; every evaluation reuses the same mask stream.
    """
    model = Model(model_cfg, make_rng(seed))
    batch = make_split(task_cfg, "train", n=n_episodes)

    def f():
        loss, _ = model.loss(batch, make_rng([seed, 1]), training=True, soft_targets=task_cfg.soft_targets)
        return loss

    return grad_check_by_param(f, model.parameters(), eps=eps, max_entries=max_entries, seed=seed)


def score_dump_csv(model: Model, episodes: EpisodeBatch, start_id: int = 0) -> str:
    """Per-candidate probabilities from every available decoder path."""
    probs = {}
    for mode in ("disc", "gen", "avg"):
        try:
            probs[mode] = model.score(episodes, mode)
        except ConfigError:
            probs[mode] = None
    lines = ["episode_id,candidate_id,p_disc,p_gen,p_avg,relevance"]
    for i in range(len(episodes)):
        for c in range(episodes.candidates.shape[1]):
            cells = ["" if probs[m] is None else f"{probs[m][i, c]:.8f}" for m in ("disc", "gen", "avg")]
            lines.append(f"{start_id + i},{c},{','.join(cells)},{episodes.relevance[i, c]:g}")
    return "\n".join(lines) + "\n"
