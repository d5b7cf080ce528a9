import numpy as np
import pytest

from src.config.experiment import (
    CvaeConfig,
    DriverConfig,
    DrivingDataConfig,
    ExperimentConfig,
    InitRanges,
    MpcConfig,
    SimConfig,
)
from src.forecast.features import N_FEATURES, ForecastBatch, normalize_controls
from src.sim.dataset import (
    challenging_sessions,
    collect_driving_data,
    driving_inits,
    episode_rows,
    episode_samples,
)
from src.sim.episode import InitialState, run_episode
from src.sim.mpc import NaiveForecaster


@pytest.fixture
def episode(mpc, driver, swap_init):
    return run_episode("lane-swap", NaiveForecaster(), driver, swap_init, SimConfig(max_steps=12), mpc, seed=0)


def _config(**updates):
    document = dict(
        task="lane-swap",
        sim=SimConfig(max_steps=10),
        mpc=MpcConfig(tau=1, horizon=3, n_samples=1),
        cvae=CvaeConfig(window=3, future_len=2, hidden=4, latent=2),
        driver=DriverConfig(gammas=[-1.0, 1.0]),
        driving=DrivingDataConfig(n_inits=4, n_test_sessions=1, ranges=InitRanges(gap=(-6.0, 6.0))),
    )
    document.update(updates)
    return ExperimentConfig(**document)


def test_challenging_sessions_pick_the_smallest_gaps():
    inits = [InitialState(8.0, 8.0, gap) for gap in (5.0, -3.1, 4.0, 3.5)]
    assert challenging_sessions(inits, 2) == [1, 3]
    assert challenging_sessions(inits, 0) == []


def test_episode_rows_lag_controls_by_one_step(episode):
    rows = episode_rows(episode, SimConfig())
    assert rows.shape == (12, N_FEATURES)
    np.testing.assert_array_equal(rows[0, 8:12], 0.0)
    first = episode.steps[0]
    expected = np.concatenate(
        [normalize_controls(first.robot.as_array()), normalize_controls(first.human.as_array())]
    )
    np.testing.assert_allclose(rows[1, 8:12], expected)
    assert np.all(rows[:, -1] == 0.0)


def test_samples_cover_every_step_with_a_full_future(episode):
    batch = episode_samples(episode, SimConfig(), window=4, future_len=3)
    assert len(batch) == 10
    assert batch.history.shape == (10, 4, N_FEATURES)
    assert batch.candidate.shape == (10, 3, 2)
    np.testing.assert_array_equal(batch.context, 0.0)
    human = np.array([record.human.as_array() for record in episode.steps])
    np.testing.assert_array_equal(batch.target[4], human[4:7])


def test_sample_stride_and_short_episodes(episode):
    assert len(episode_samples(episode, SimConfig(), window=4, future_len=3, stride=4)) == 3
    assert episode_samples(episode, SimConfig(), window=4, future_len=20) is None


def test_collect_driving_data_splits_by_session():
    config = _config()
    inits, drivers = collect_driving_data(config, master_seed=5)
    assert len(inits) == 4
    assert [d.gamma for d in drivers] == [-1.0, 1.0]
    expected = challenging_sessions(inits, 1)
    for data in drivers:
        assert data.test_sessions == expected
        assert len(data.train) > 0 and len(data.test) > 0
        assert data.train.history.shape[1:] == (3, N_FEATURES)
        assert data.test.target.shape[1:] == (2, 2)


def test_collect_driving_data_is_seed_deterministic():
    config = _config()
    _, first = collect_driving_data(config, master_seed=5)
    _, second = collect_driving_data(config, master_seed=5)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.train.target, b.train.target)
        np.testing.assert_array_equal(a.test.history, b.test.history)


def test_driving_inits_follow_scenario():
    config = _config(task="lane-change")
    inits = driving_inits(config, master_seed=1)
    assert all(init.gray_gap is not None for init in inits)


def test_forecast_batch_round_trips_through_npz(tmp_path):
    _, drivers = collect_driving_data(_config(), master_seed=2)
    path = tmp_path / "driver_0_train.npz"
    drivers[0].train.save(path)
    loaded = ForecastBatch.load(path)
    np.testing.assert_array_equal(loaded.history, drivers[0].train.history)
