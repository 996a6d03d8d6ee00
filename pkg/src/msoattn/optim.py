from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .tensor import Parameter


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class Adam:
    """Adam with bias correction and decoupled weight decay.

    Defaults are the training hyperparameters of the visual-dialog model:
    beta1 0.9, beta2 0.997, eps 1e-9, weight decay 1e-5.
    """

    params: list[Parameter]
    beta1: float = 0.9
    beta2: float = 0.997
    eps: float = 1e-9
    weight_decay: float = 1e-5
    state: AdamState = field(default_factory=AdamState)

    def __post_init__(self):
        self.params = [p for p in self.params if p.trainable]
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names passed to Adam")

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        adam_step(self.params, self.state, lr, self.beta1, self.beta2, self.eps, self.weight_decay)


def adam_step(
    params: Iterable[Parameter],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.997,
    eps: float = 1e-9,
    weight_decay: float = 1e-5,
) -> None:
    """One in-place update of every trainable parameter that has a gradient."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p in params:
        if not p.trainable:
            continue
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        if m.shape != p.value.shape:
            raise ValueError(f"optimizer state for {p.name} has shape {m.shape}, expected {p.value.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p.value -= lr * weight_decay * p.value
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
