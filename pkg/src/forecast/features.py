"""Feature rows and sample containers for the human-control forecaster.

A history row describes one step: eight scaled relative state features, the
normalized robot and human controls applied on the previous step, and a
future flag (0 for history). Controls are normalized to [-1, 1] by the
throttle and steering magnitudes.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Deque, Iterable, Optional, Sequence

import numpy as np

from src.config.experiment import SimConfig
from src.sim.world import Control, WorldState
from src.utils.errors import ConfigurationError, ContractViolation

THROTTLE_SCALE = 1.5
STEER_SCALE = 0.04
CONTROL_SCALE = np.array([THROTTLE_SCALE, STEER_SCALE])

N_STATE_FEATURES = 8
N_FEATURES = N_STATE_FEATURES + 4 + 1


def normalize_controls(controls: np.ndarray) -> np.ndarray:
    return np.asarray(controls, dtype=np.float64) / CONTROL_SCALE


def denormalize_controls(controls: np.ndarray) -> np.ndarray:
    return np.asarray(controls, dtype=np.float64) * CONTROL_SCALE


def state_features(world: WorldState, sim: SimConfig) -> np.ndarray:
    robot, human, gray = world.robot, world.human, world.gray
    lane_width = abs(sim.human_lane_x - sim.robot_lane_x) or 1.0
    features = [
        (robot.x - sim.robot_lane_x) / lane_width,
        (human.x - robot.x) / lane_width,
        (human.y - robot.y) / 10.0,
        robot.vx,
        robot.vy / 10.0,
        (human.vy - robot.vy) / 5.0,
        (gray.y - robot.y) / 30.0 if gray is not None else 0.0,
        (gray.vy - robot.vy) / 5.0 if gray is not None else 0.0,
    ]
    return np.array(features)


def history_row(
    world: WorldState, robot: Control, human: Control, sim: SimConfig
) -> np.ndarray:
    controls = np.concatenate(
        [normalize_controls(robot.as_array()), normalize_controls(human.as_array())]
    )
    return np.concatenate([state_features(world, sim), controls, [0.0]])


def future_rows(candidate: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Encoder rows for the future steps: robot and human controls, flag 1."""
    candidate = normalize_controls(candidate)
    target = normalize_controls(target)
    lead = candidate.shape[:-1]
    zeros = np.zeros(lead + (N_STATE_FEATURES,))
    flag = np.ones(lead + (1,))
    return np.concatenate([zeros, candidate, target, flag], axis=-1)


class HistoryBuffer:
    """Rolling window of history rows, padded with the first row."""

    def __init__(self, window: int):
        if window < 1:
            raise ConfigurationError("History window must be at least 1.")
        self.window = window
        self._rows: Deque[np.ndarray] = deque(maxlen=window)

    def push(self, row: np.ndarray) -> None:
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (N_FEATURES,):
            raise ContractViolation(f"History rows need {N_FEATURES} features.")
        if not self._rows:
            for _ in range(self.window - 1):
                self._rows.append(row)
        self._rows.append(row)

    def array(self) -> np.ndarray:
        if not self._rows:
            raise ContractViolation("History buffer is empty.")
        return np.stack(self._rows)


def history_windows(rows: np.ndarray, window: int) -> np.ndarray:
    """Window ending at every row index, front-padded with the first row."""
    rows = np.asarray(rows, dtype=np.float64)
    padded = np.concatenate([np.repeat(rows[:1], window - 1, axis=0), rows])
    index = np.arange(rows.shape[0])[:, None] + np.arange(window)[None, :]
    return padded[index]


@dataclass(frozen=True)
class SequenceSample:
    history: np.ndarray
    candidate: np.ndarray
    target: Optional[np.ndarray] = None
    context: int = 0


@dataclass(frozen=True)
class ForecastBatch:
    """Stacked samples: history (N,W,F), candidate and target (N,τ,2), context (N,)."""

    history: np.ndarray
    candidate: np.ndarray
    target: np.ndarray
    context: np.ndarray

    def __post_init__(self) -> None:
        n = self.history.shape[0]
        if not (
            self.candidate.shape[0] == self.target.shape[0] == self.context.shape[0] == n
        ):
            raise ContractViolation("Forecast batch arrays disagree on sample count.")

    def __len__(self) -> int:
        return self.history.shape[0]

    def take(self, index: np.ndarray) -> "ForecastBatch":
        return ForecastBatch(
            self.history[index], self.candidate[index], self.target[index], self.context[index]
        )

    @classmethod
    def from_samples(cls, samples: Sequence[SequenceSample]) -> "ForecastBatch":
        if not samples:
            raise ContractViolation("Cannot batch zero samples.")
        if any(sample.target is None for sample in samples):
            raise ContractViolation("Training samples need targets.")
        return cls(
            np.stack([s.history for s in samples]),
            np.stack([s.candidate for s in samples]),
            np.stack([s.target for s in samples]),
            np.array([float(s.context) for s in samples]),
        )

    @classmethod
    def concat(cls, parts: Iterable["ForecastBatch"]) -> "ForecastBatch":
        parts = [part for part in parts if len(part)]
        if not parts:
            raise ContractViolation("Cannot concatenate zero non-empty batches.")
        return cls(
            np.concatenate([p.history for p in parts]),
            np.concatenate([p.candidate for p in parts]),
            np.concatenate([p.target for p in parts]),
            np.concatenate([p.context for p in parts]),
        )

    def save(self, path: Path | str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(
            path,
            history=self.history,
            candidate=self.candidate,
            target=self.target,
            context=self.context,
        )

    @classmethod
    def load(cls, path: Path | str) -> "ForecastBatch":
        try:
            with np.load(Path(path)) as data:
                return cls(data["history"], data["candidate"], data["target"], data["context"])
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigurationError(f"Cannot load forecast samples from {path}: {exc}") from exc
