from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tape, Tensor, make_rng


class NonFiniteLoss(FloatingPointError):
    pass


def _eval(f: Callable[[], Tensor]) -> float:
    val = f().item()
    if not math.isfinite(val):
        raise NonFiniteLoss(f"loss evaluated to {val}")
    return val


def grad_check_by_param(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> dict[str, float]:
    """Worst relative error between tape and central-difference gradients, per parameter.

    ``f`` must be deterministic: it is called once under a tape and twice per
    probed entry without one. Relative error is ``|a - n| / max(|a|, |n|, floor)``;
    the floor keeps round-off on gradients that are exactly zero (e.g. a bias
    feeding a softmax) from reading as a large relative error.
    Frozen parameters are skipped. With ``max_entries`` only that many entries
    per parameter are probed, chosen by ``seed``.
    """
    trainable = [p for p in params if p.trainable]
    for p in trainable:
        p.grad = None
    with Tape() as tape:
        loss = f()
    if not math.isfinite(loss.item()):
        raise NonFiniteLoss(f"loss evaluated to {loss.item()}")
    tape.backward(loss)

    rng = make_rng(seed)
    report = {}
    for p in trainable:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = _eval(f)
            flat[i] = orig - eps
            down = _eval(f)
            flat[i] = orig
            num = (up - down) / (2 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
        report[p.name] = worst
    return report


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    report = grad_check_by_param(f, params, eps=eps, max_entries=max_entries, seed=seed, floor=floor)
    return max(report.values(), default=0.0)
