import pytest

from src.config.experiment import MpcConfig, SimConfig
from src.sim.driver import SyntheticDriverParams
from src.sim.episode import InitialState


@pytest.fixture
def sim():
    return SimConfig(max_steps=30)


@pytest.fixture
def mpc():
    # Nine candidates keep closed-loop tests fast
    return MpcConfig(tau=1, horizon=4, n_samples=1)


@pytest.fixture
def driver():
    return SyntheticDriverParams(gamma=0.5)


@pytest.fixture
def swap_init():
    return InitialState(robot_speed=8.0, human_speed=8.0, gap=3.0)
