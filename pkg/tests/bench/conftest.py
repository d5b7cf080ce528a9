import pytest

from src.config.experiment import ExperimentConfig, FlConfig, LqrTaskConfig
from src.utils import events


@pytest.fixture
def lqr_config(tmp_path):
    return ExperimentConfig(
        task="lqr",
        trials=2,
        master_seed=3,
        output_dir=str(tmp_path / "runs"),
        fl=FlConfig(rounds=2, epochs=2, batch_size=16, base_lr=0.05),
        lqr=LqrTaskConfig(n_init=10, horizon=10, test_fraction=0.2),
    )


@pytest.fixture(autouse=True)
def no_sinks():
    events.clear_sinks()
    yield
    events.clear_sinks()
