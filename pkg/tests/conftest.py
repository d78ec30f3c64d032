import numpy as np
import pytest

from sterf.autodiff import Tape

ACCEPTANCE_LINES: list[str] = []


def numeric_grad(f, x, h=1e-5):
    """Central differences of a scalar function of one array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = f(x)
        x[idx] = orig - h
        down = f(x)
        x[idx] = orig
        g[idx] = (up - down) / (2 * h)
    return g


def tape_grads(build, arrays, stim):
    """Run ``build(tape, *vars)`` and return gradients of <stim, out> for each array."""
    tape = Tape()
    vs = [tape.input(a) for a in arrays]
    out = build(tape, *vs)
    adj = tape.backward(out, stim)
    return [adj.get(v.id, np.zeros_like(v.value)) for v in vs]


def fd_grads(build, arrays, stim, h=1e-5):
    grads = []
    for k in range(len(arrays)):
        def f(a, k=k):
            tape = Tape()
            vs = [tape.input(a if i == k else arrays[i]) for i in range(len(arrays))]
            return float(np.sum(stim * build(tape, *vs).value))
        grads.append(numeric_grad(f, arrays[k], h))
    return grads


def max_rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = np.maximum(np.abs(a), np.abs(b))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > 0, np.abs(a - b) / scale, 0.0)
    return float(rel.max()) if rel.size else 0.0


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
