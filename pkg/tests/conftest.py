import numpy as np
import pytest

from msoattn.tensor import Tape, Tensor, make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


def numeric_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x`` (modified in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return g


def tape_grads(f, tensors):
    """Run ``f()`` (returning a scalar Tensor) under a tape; return grads of ``tensors``."""
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    with Tape() as tape:
        out = f()
    tape.backward(out)
    return [t.grad if t.grad is not None else np.zeros_like(t.value) for t in tensors]


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


def weighted_sum(out: Tensor, w: np.ndarray):
    from msoattn import ops
    return ops.sum_all(ops.mul(out, Tensor(w)))


ACCEPTANCE_LINES: list[str] = []


def verdict(number: int, title: str, ok: bool, detail: str) -> None:
    """Record a one-line acceptance result, then fail the test if needed."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
