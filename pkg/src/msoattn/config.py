"""Flat JSON run configuration.

One JSON object whose keys are the union of the task, encoder, decoder and
schedule fields; ``d`` and ``use_positional_embedding`` feed both the task
and the encoder. Unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .encoder import EncoderConfig
from .model import ModelConfig
from .task import TaskConfig
from .tensor import ConfigError
from .training import TrainSchedule

_ENCODER_KEYS = ("h", "l", "use_self_attention", "share_weights_across_stacks", "dropout_rate")
_MODEL_KEYS = ("decoders", "aggregation", "embed_width", "decoder_dropout")
_RUN_KEYS = ("eval_mode",)


@dataclass
class RunConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=lambda: ModelConfig(EncoderConfig(d=64)))
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    eval_mode: str = "disc"

    def __post_init__(self):
        self._sync()

    def _sync(self) -> None:
        enc = self.model.encoder
        enc.u = 3
        enc.d = self.task.d
        enc.use_positional_embedding = self.task.use_positional_embedding
        self.model.vocab_size = self.task.vocab_size

    @property
    def seed(self) -> int:
        return self.task.seed

    def validate(self) -> "RunConfig":
        self._sync()
        self.task.validate()
        self.model.validate()
        self.schedule.validate()
        if self.eval_mode not in ("disc", "gen", "avg"):
            raise ConfigError(f"eval_mode must be disc, gen or avg, got {self.eval_mode!r}")
        return self

    def to_flat(self) -> dict:
        flat = asdict(self.task)
        enc = self.model.encoder
        flat.update({k: getattr(enc, k) for k in _ENCODER_KEYS})
        flat.update({k: getattr(self.model, k) for k in _MODEL_KEYS})
        flat.update(asdict(self.schedule))
        flat["eval_mode"] = self.eval_mode
        return flat

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_flat(cls, doc: dict) -> "RunConfig":
        task_keys = {f.name for f in fields(TaskConfig)}
        sched_keys = {f.name for f in fields(TrainSchedule)}
        known = task_keys | sched_keys | set(_ENCODER_KEYS) | set(_MODEL_KEYS) | set(_RUN_KEYS)
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        task = TaskConfig(**{k: v for k, v in doc.items() if k in task_keys})
        enc = EncoderConfig(d=task.d, **{k: doc[k] for k in _ENCODER_KEYS if k in doc})
        model = ModelConfig(enc, **{k: doc[k] for k in _MODEL_KEYS if k in doc})
        sched = TrainSchedule(**{k: v for k, v in doc.items() if k in sched_keys})
        return cls(task, model, sched, doc.get("eval_mode", "disc")).validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        return cls.from_flat(json.loads(path.read_text(encoding="utf-8")))
