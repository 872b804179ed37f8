import pytest

from stageverify.model import ThresholdConfig
from stageverify.plan import builtin_hdd_plan
from stageverify.replayio import write_replay
from stageverify.simulate import simulate_scenario


@pytest.fixture(scope="session")
def plan():
    return builtin_hdd_plan()


@pytest.fixture(scope="session")
def cfg():
    return ThresholdConfig()


@pytest.fixture(scope="session")
def happy_replay_bytes(plan):
    """The seed-1 happy scenario, shared across tests (generation is a few seconds)."""
    return write_replay(simulate_scenario(plan, "happy", seed=1))


@pytest.fixture(scope="session")
def cheat_replay_bytes(plan):
    return write_replay(simulate_scenario(plan, "cheat-screw", seed=1))
