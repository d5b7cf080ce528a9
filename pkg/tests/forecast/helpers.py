import numpy as np

from src.config.experiment import CvaeConfig
from src.forecast.features import N_FEATURES, ForecastBatch
from src.sim.world import JOINT_ARRAY


def toy_batch(n: int, config: CvaeConfig, seed: int = 0) -> ForecastBatch:
    """Human throttles up unless the robot brakes; steering stays 0."""
    rng = np.random.default_rng(seed)
    history = rng.normal(scale=0.5, size=(n, config.window, N_FEATURES))
    candidate = JOINT_ARRAY[rng.integers(0, len(JOINT_ARRAY), size=(n, config.future_len))]
    target = np.zeros_like(candidate)
    target[..., 0] = np.where(candidate[..., 0] >= 0, 1.5, 0.0)
    return ForecastBatch(history, candidate, target, np.zeros(n))


def yielding_batch(n: int, config: CvaeConfig, seed: int = 0) -> ForecastBatch:
    """Human brakes whenever the robot accelerates and speeds up when it brakes."""
    rng = np.random.default_rng(seed)
    history = rng.normal(scale=0.5, size=(n, config.window, N_FEATURES))
    throttle = rng.choice([-1.5, 1.5], size=(n, config.future_len))
    candidate = np.stack([throttle, np.zeros_like(throttle)], axis=-1)
    target = np.zeros_like(candidate)
    target[..., 0] = -throttle
    return ForecastBatch(history, candidate, target, np.zeros(n))
