import numpy as np
import pytest

from src.config.experiment import FlConfig
from src.fl.client import ClientState
from src.utils import events

from .helpers import MeanTask, client_data


@pytest.fixture
def task():
    return MeanTask()


@pytest.fixture
def fl():
    return FlConfig(rounds=5, epochs=3, base_lr=0.05, batch_size=4, convergence_threshold=0.0)


@pytest.fixture
def clients():
    # Shared coordinates agree across clients, personal ones do not
    centers = [[1.0, -1.0, 0.0, 2.0], [1.0, -1.0, 3.0, -2.0], [1.0, -1.0, -3.0, 0.5]]
    return [
        ClientState(k, client_data(c, seed=k), client_data(c, n=8, seed=10 + k))
        for k, c in enumerate(centers)
    ]


@pytest.fixture
def identical_clients():
    rows = np.tile([0.5, -0.25, 1.0, 2.0], (8, 1))
    return [ClientState(k, rows.copy(), rows.copy()) for k in range(2)]


@pytest.fixture(autouse=True)
def no_sinks():
    events.clear_sinks()
    yield
    events.clear_sinks()
