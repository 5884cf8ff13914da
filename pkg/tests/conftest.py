import numpy as np
import pytest

from prefrmab.world import ArmModel, WorldModel

_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; returns the verdict so tests can assert on it."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE[number] = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}" + (f"  ({detail})" if detail else "")
        print(_ACCEPTANCE[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])


@pytest.fixture
def toy_world():
    """One arm; acting moves to state 1, resting moves to state 0."""
    arm = ArmModel([[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]], [0.0, 1.0])
    return WorldModel([arm], budget=1, name="toy")


def random_world(rng, n_arms=3, n_states=3, budget=1):
    arms = []
    for _ in range(n_arms):
        kp = rng.dirichlet(np.ones(n_states), size=n_states)
        ka = rng.dirichlet(np.ones(n_states), size=n_states)
        arms.append(ArmModel(kp, ka, rng.random(n_states)))
    return WorldModel(arms, budget)
