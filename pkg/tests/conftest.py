import numpy as np
import pytest

from iol.forward_sim import make_agent, make_environment, simulate
from iol.trajectory_store import TrajectoryRecord


def random_records(n, d=3, horizon=(1, 6), seed=0, binary_y=False):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        T = int(rng.integers(horizon[0], horizon[1] + 1))
        y = rng.integers(0, 2, T).astype(float) if binary_y else rng.normal(size=T) * 3 + 1
        out.append(TrajectoryRecord(f"r{i}", rng.normal(size=(T, d)) * 2 - 1, rng.integers(0, 2, T), y))
    return out


@pytest.fixture
def small_corpus():
    env = make_environment(3, [7, 0], 0.5)
    agent = make_agent(3, 0.05, [7, 1])
    corpus, beliefs = simulate(env, agent, 30, 6, seed=7)
    return corpus, beliefs


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
