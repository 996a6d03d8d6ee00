"""Many-source-one-target attention on a small numpy autodiff core."""

from .attention import (
    AttentionRecord,
    frozen_mha_params,
    init_block_params,
    mso_block,
    multi_head_attention,
    paired_attention,
    scaled_dot_attention,
    simplified_attention,
)
from .config import RunConfig
from .encoder import EncoderConfig, UtilitySet, build_encoder, collect_attention, encoder_forward
from .metrics import MetricsReport, aggregate, mrr, ndcg, recall_at_k
from .model import Model, ModelConfig
from .optim import Adam
from .paramcount import count_encoder, count_model, count_naive_layer, count_proposed_layer
from .task import TaskConfig, gen_episode, make_split
from .tensor import ConfigError, Parameter, ShapeError, StateError, Tape, TapeError, Tensor, make_rng
from .training import TrainSchedule, evaluate, train

__version__ = "0.1.0"
