import pytest

from src.config.experiment import CvaeConfig

from .helpers import toy_batch


@pytest.fixture
def config():
    return CvaeConfig(hidden=3, latent=2, window=2, future_len=2)


@pytest.fixture
def batch(config):
    return toy_batch(4, config)
