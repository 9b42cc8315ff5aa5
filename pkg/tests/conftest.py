import numpy as np
import pytest

from sheetzero.rng import derive_seeds


def within_se(samples, target, k=5.0):
    """Mean of ``samples`` within ``k`` Monte Carlo standard errors of ``target``."""
    x = np.asarray(samples, dtype=float)
    se = x.std(ddof=1) / np.sqrt(x.size)
    return abs(x.mean() - target) <= k * se, x.mean(), se


@pytest.fixture(scope="session")
def seeds20k():
    return derive_seeds(11, 20000)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_line():
    """Record a one-line pass/fail verdict for the terminal summary."""
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
