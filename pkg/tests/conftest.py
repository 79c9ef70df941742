import os

import numpy as np
import pytest

from optimist.core import Trajectory

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> str:
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def workers() -> int:
    return int(os.environ.get("OPTIMIST_WORKERS", "1"))


def traj(arms, outcomes, K) -> Trajectory:
    return Trajectory(np.asarray(arms), np.asarray(outcomes, dtype=float), K)


def nuisances(target, means, var):
    """Hand-built nuisance vector; ``means[a]`` is ignored at the statistic arm."""
    from optimist.inference import NuisanceVector

    K = len(means)
    mask = np.zeros(K, bool)
    mask[target.stat_arm - 1] = True
    m = np.ma.masked_array(np.asarray(means, float), mask=mask)
    v = np.ma.masked_array(np.broadcast_to(np.asarray(var, float), (K,)).copy())
    eps = np.ma.masked_array(np.zeros(K), mask=mask.copy())
    return NuisanceVector(target, m, m, v, eps, "custom", np.zeros(K, np.int64))
