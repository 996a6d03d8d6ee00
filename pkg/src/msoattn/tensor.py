"""Dense float64 tensors with a reverse-mode tape.

A :class:`Tensor` wraps a numpy array whose trailing two axes are read as
rows x cols; any leading axes are batch axes and broadcast like ``np.matmul``.
Operations (see :mod:`msoattn.ops`) record themselves on the active
:class:`Tape` when at least one input requires a gradient.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "ShapeError",
    "TapeError",
    "ConfigError",
    "StateError",
    "as_tensor",
    "make_rng",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class TapeError(RuntimeError):
    """Misuse of a tape (double backward, foreign thread, ...)."""


class ConfigError(ValueError):
    """A configuration violates a structural constraint."""


class StateError(RuntimeError):
    """An operation was requested in a state that cannot serve it."""


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "__weakref__")

    def __init__(self, value, requires_grad: bool = False):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        self.value = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[-2]

    @property
    def cols(self) -> int:
        return self.value.shape[-1]

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A named, optionally trainable leaf tensor."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, value, trainable: bool = True):
        super().__init__(value, requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    @property
    def size(self) -> int:
        return int(self.value.size)

    def __repr__(self) -> str:
        flag = "" if self.trainable else ", frozen"
        return f"Parameter({self.name!r}, shape={self.shape}{flag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_local = threading.local()


def active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out: Tensor, parents: Sequence[Tensor], backward: Callable):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Records executed operations so gradients can be replayed in reverse.

    Use as a context manager; operations run inside the ``with`` block are
    recorded on this tape. ``backward`` may be called once.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._consumed = False
        self._owner = threading.get_ident()

    def __enter__(self) -> "Tape":
        self._check_thread()
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def _check_thread(self) -> None:
        if threading.get_ident() != self._owner:
            raise TapeError("a Tape must only be used from the thread that created it")

    def record(self, out: Tensor, parents: Sequence[Tensor], backward: Callable) -> None:
        self._nodes.append(_Node(out, parents, backward))

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> None:
        """Accumulate d(loss)/d(x) into ``x.grad`` for every recorded input."""
        self._check_thread()
        if self._consumed:
            raise TapeError("backward already ran on this tape; create a new Tape")
        self._consumed = True
        if seed is None:
            if loss.value.size != 1:
                raise ShapeError(f"backward without seed needs a scalar loss, got {loss.shape}")
            seed = np.ones_like(loss.value)
        loss.grad = seed if loss.grad is None else loss.grad + seed
        for node in reversed(self._nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.value.shape:
                    pg = unbroadcast(pg, parent.value.shape)
                parent.grad = pg if parent.grad is None else parent.grad + pg
            # an intermediate's gradient is dead once its node has run
            if node.out is not loss:
                node.out.grad = None
        self._nodes.clear()


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def record(out: Tensor, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Attach ``backward`` to ``out`` on the active tape if any parent needs it."""
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, backward)
    return out


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator seeded through ``SeedSequence``.

    ``seed`` may be an int or a sequence of ints (e.g. ``[task_seed, index]``);
    the resulting stream is identical on every platform numpy supports.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
