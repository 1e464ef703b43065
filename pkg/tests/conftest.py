import os

# single-threaded BLAS keeps checkpoints bitwise reproducible
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

_ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


def sinkhorn_scaling(cost, eps, i_max):
    """Multiplicative Sinkhorn iteration, no logs; valid while exp(-cost/eps) stays representable."""
    u = np.exp(-np.asarray(cost) / eps)
    n, m = u.shape
    a = np.full(n, 1.0 / n)
    for _ in range(i_max):
        b = (1.0 / m) / (u.T @ a)
        a = (1.0 / n) / (u @ b)
    return a[:, None] * u * b[None, :]


def sinkhorn_fixed_point(cost, eps, tol=1e-12, max_iter=200_000):
    """Iterate the scaling map until both marginals are within ``tol`` (L1)."""
    u = np.exp(-np.asarray(cost) / eps)
    n, m = u.shape
    a = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        b = (1.0 / m) / (u.T @ a)
        a = (1.0 / n) / (u @ b)
        plan = a[:, None] * u * b[None, :]
        if np.abs(plan.sum(axis=0) - 1.0 / m).sum() <= tol:
            return plan
    raise RuntimeError("fixed-point oracle did not converge")
