"""Interaction datasets for the forecaster, one client per synthetic driver.

Each initial state is a session. A driver's sessions are played with the
robot MPC (naive predictor by default, a trained forecaster on
re-collection) and every step with a full τ-step future becomes a sample.
The sessions with the smallest initial gap are held out for testing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.config.experiment import ExperimentConfig, SimConfig
from src.forecast.features import ForecastBatch, history_row, history_windows
from src.sim.driver import SyntheticDriverParams
from src.sim.episode import (
    Episode,
    InitialState,
    generate_initial_states,
    run_episode,
    scenario_context,
)
from src.sim.mpc import Forecaster, NaiveForecaster
from src.sim.world import IDLE
from src.utils.errors import ContractViolation
from src.utils.seeding import derive_seed

log = logging.getLogger(__name__)


def episode_rows(episode: Episode, sim: SimConfig) -> np.ndarray:
    """History row per step: the state then and the controls applied just before."""
    rows = []
    previous = (IDLE, IDLE)
    for record in episode.steps:
        rows.append(history_row(record.world, previous[0], previous[1], sim))
        previous = (record.robot, record.human)
    return np.array(rows)


def episode_samples(
    episode: Episode, sim: SimConfig, window: int, future_len: int, stride: int = 1
) -> Optional[ForecastBatch]:
    """Samples at every ``stride``-th step that has ``future_len`` steps ahead."""
    n_steps = len(episode.steps)
    if n_steps < future_len:
        return None
    windows = history_windows(episode_rows(episode, sim), window)
    robot = np.array([record.robot.as_array() for record in episode.steps])
    human = np.array([record.human.as_array() for record in episode.steps])
    starts = np.arange(0, n_steps - future_len + 1, stride)
    future = starts[:, None] + np.arange(future_len)[None, :]
    context = float(scenario_context(episode.scenario))
    return ForecastBatch(
        history=windows[starts],
        candidate=robot[future],
        target=human[future],
        context=np.full(starts.shape[0], context),
    )


def challenging_sessions(inits: Sequence[InitialState], n_test: int) -> List[int]:
    """Indices of the ``n_test`` inits with the smallest initial |gap|."""
    order = sorted(range(len(inits)), key=lambda i: (abs(inits[i].gap), i))
    return sorted(order[:n_test])


@dataclass
class DriverData:
    gamma: float
    train: ForecastBatch
    test: ForecastBatch
    test_sessions: List[int]


def collect_driver_data(
    config: ExperimentConfig,
    gamma: float,
    driver_index: int,
    inits: Sequence[InitialState],
    master_seed: int,
    forecaster: Optional[Forecaster] = None,
    collection: int = 0,
) -> DriverData:
    """Play every session of one driver; later collections draw fresh episode seeds."""
    scenario = config.task
    seed_keys = (collection,) if collection else ()
    forecaster = forecaster or NaiveForecaster()
    params = SyntheticDriverParams.from_config(config.driver, gamma)
    test_sessions = challenging_sessions(inits, config.driving.n_test_sessions)
    train_parts, test_parts = [], []
    for session, init in enumerate(inits):
        episode = run_episode(
            scenario,
            forecaster,
            params,
            init,
            config.sim,
            config.mpc,
            derive_seed(master_seed, "episode", driver_index, session, *seed_keys),
            window=config.cvae.window,
        )
        samples = episode_samples(
            episode,
            config.sim,
            config.cvae.window,
            config.cvae.future_len,
            config.driving.sample_stride,
        )
        if samples is None:
            continue
        (test_parts if session in test_sessions else train_parts).append(samples)
    if not train_parts or not test_parts:
        raise ContractViolation(
            "Driver produced no usable sessions.", {"gamma": gamma, "driver": driver_index}
        )
    train, test = ForecastBatch.concat(train_parts), ForecastBatch.concat(test_parts)
    log.info(
        "Collected driver data",
        extra={
            "gamma": gamma,
            "collection": collection,
            "train_samples": len(train),
            "test_samples": len(test),
        },
    )
    return DriverData(gamma, train, test, test_sessions)


def driving_inits(config: ExperimentConfig, master_seed: int) -> List[InitialState]:
    return generate_initial_states(
        config.driving.n_inits,
        config.driving.ranges,
        derive_seed(master_seed, "inits"),
        config.task,
    )


def collect_driving_data(
    config: ExperimentConfig,
    master_seed: int,
    forecasters: Optional[Dict[int, Forecaster]] = None,
    collection: int = 0,
) -> tuple[List[InitialState], List[DriverData]]:
    """Sessions for every configured driver; ``forecasters`` maps driver index."""
    inits = driving_inits(config, master_seed)
    forecasters = forecasters or {}
    drivers = [
        collect_driver_data(
            config, gamma, index, inits, master_seed, forecasters.get(index), collection
        )
        for index, gamma in enumerate(config.driver.gammas)
    ]
    return inits, drivers
