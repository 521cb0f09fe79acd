from fractions import Fraction

import numpy as np
import pytest

from mechlab.assignment import available_backends
from mechlab.model import AssignmentProblem
from mechlab.priors import DensePrior

ACCEPTANCE_LINES = []


def record(criterion: str, passed: bool, detail: str) -> None:
    """Collect one line for the acceptance summary printed after the run."""
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    print(ACCEPTANCE_LINES[-1])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param


def make_problem(u, v=None, c=None, table=None, M=1, states=None, signal_sets=None):
    """Small instance from nested lists; missing tensors are zero.

    ``table`` defaults to a uniform prior over two states and binary signals.
    """
    u = np.asarray(u, dtype=object if isinstance(np.asarray(u).flat[0], Fraction) else float)
    n, _, m = u.shape
    v = np.zeros_like(u) if v is None else v
    c = np.zeros((n, n, n, n, m), dtype=u.dtype) if c is None else c
    if table is None:
        table = np.full((m,) + (2,) * n, 1.0 / (m * 2**n))
    table = np.asarray(table)
    states = states or [f"t{k}" for k in range(m)]
    signal_sets = signal_sets or [[f"s{x}" for x in range(table.shape[1 + i])] for i in range(n)]
    return AssignmentProblem(states, signal_sets, u, v, c, DensePrior(table), M)


@pytest.fixture
def two_buyer_problem():
    """n=2, two states, binary signals with an informative prior."""
    rng = np.random.default_rng(3)
    u = rng.integers(0, 11, (2, 2, 2)) / 10
    v = rng.integers(0, 5, (2, 2, 2)) / 10
    c = rng.integers(0, 4, (2, 2, 2, 2, 2)) / 10
    lam, Q = np.array([0.5, 0.5]), np.array([[0.8, 0.2], [0.4, 0.6]])
    table = lam[:, None, None] * Q[:, :, None] * Q[:, None, :]
    return make_problem(u, v, c, table)
