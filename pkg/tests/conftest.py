import numpy as np
import pytest

from rganet.engine import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand(rng, *shape, requires_grad=True, dtype=np.float64, scale=1.0):
    return Tensor((rng.standard_normal(shape) * scale).astype(dtype), requires_grad=requires_grad)


def weighted_sum(t, weights):
    """sum(t * weights): a scalar loss whose gradient is not degenerate."""
    return (t * Tensor(weights)).sum()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
