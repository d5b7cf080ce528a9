"""Sampling MPC over the discrete robot control set.

Every τ-step sequence of the 9 joint controls is a candidate (only the
zero-steering ones when the robot keeps its lane). The forecaster
predicts the human's controls for each candidate, the world is rolled forward
H steps for all candidates and samples at once, and the candidate with the
lowest expected accumulated cost wins.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import List, Optional, Protocol

import numpy as np

from src.config.experiment import MpcConfig, SimConfig
from src.sim.world import JOINT_ARRAY, Control, WorldState
from src.utils.errors import NumericError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForecastContext:
    """What a forecaster may look at when the robot plans."""

    history: np.ndarray
    human_control: Control
    context: int = 0


class Forecaster(Protocol):
    def __call__(
        self,
        ctx: ForecastContext,
        candidates: np.ndarray,
        n_samples: int,
        rng: np.random.Generator,
    ) -> np.ndarray:
        """Human control forecasts shaped (n_candidates, n_samples, steps, 2)."""
        ...


def naive_predictor(current_human_control: Control, tau: int) -> List[Control]:
    """The current human control, repeated τ times."""
    return [current_human_control] * tau


class NaiveForecaster:
    """Non-proactive forecaster: ignores the candidate and the history."""

    def __call__(
        self,
        ctx: ForecastContext,
        candidates: np.ndarray,
        n_samples: int,
        rng: np.random.Generator,
    ) -> np.ndarray:
        steps = candidates.shape[1]
        sequence = np.array(
            [control.as_array() for control in naive_predictor(ctx.human_control, steps)]
        )
        # Deterministic, so a single sample carries the whole expectation
        return np.broadcast_to(sequence, (candidates.shape[0], 1, steps, 2)).copy()


def candidate_sequences(tau: int, lane_keeping: bool = False) -> np.ndarray:
    """All 9^τ sequences, shape (9^τ, τ, 2), in lexicographic joint-index order.

    With ``lane_keeping`` only the 3^τ zero-steering sequences remain.
    """
    pool = np.arange(len(JOINT_ARRAY))
    if lane_keeping:
        pool = np.flatnonzero(JOINT_ARRAY[:, 1] == 0.0)
    indices = np.array(list(itertools.product(pool, repeat=tau)))
    return JOINT_ARRAY[indices]


def mpc_cost(world: WorldState, config: MpcConfig) -> float:
    """J = α·Δp^y·Δv^y + β/|Δp|, clipped below at C_low when configured."""
    distance = world.distance
    if distance == 0:
        raise NumericError("Cost undefined for coincident cars.", {"t": world.t})
    cost = (
        config.alpha * (world.robot.y - world.human.y) * (world.robot.vy - world.human.vy)
        + config.beta / distance
    )
    if config.c_low is not None:
        cost = max(config.c_low, cost)
    return float(cost)


def _stage_cost(dpx, dpy, dvy, config: MpcConfig) -> np.ndarray:
    distance = np.hypot(dpx, dpy)
    with np.errstate(divide="ignore"):
        cost = config.alpha * dpy * dvy + config.beta / distance
    if config.c_low is not None:
        cost = np.maximum(config.c_low, cost)
    return cost


def rollout_costs(
    world: WorldState,
    candidates: np.ndarray,
    human_forecasts: np.ndarray,
    config: MpcConfig,
    sim: SimConfig,
) -> np.ndarray:
    """Expected accumulated cost per candidate over the planning horizon.

    Controls beyond the end of a candidate or a forecast hold the last entry.
    Rollouts that collide or leave the road cost +inf.
    """
    n_candidates, tau = candidates.shape[:2]
    n_samples, f_steps = human_forecasts.shape[1:3]
    dt = world.dt
    shape = (n_candidates, n_samples)

    def car_arrays(car):
        return [np.full(shape, value) for value in (car.x, car.y, car.speed, car.heading)]

    rx, ry, rs, rh = car_arrays(world.robot)
    hx, hy, hs, hh = car_arrays(world.human)
    gray = world.gray
    total = np.zeros(shape)
    feasible = np.ones(shape, dtype=bool)

    for h in range(config.horizon):
        robot_u = candidates[:, min(h, tau - 1)]
        human_u = human_forecasts[:, :, min(h, f_steps - 1)]
        rh = rh + robot_u[:, None, 1]
        rs = np.maximum(0.0, rs + robot_u[:, None, 0] * dt)
        rx = rx + rs * np.sin(rh) * dt
        ry = ry + rs * np.cos(rh) * dt
        hh = hh + human_u[..., 1]
        hs = np.maximum(0.0, hs + human_u[..., 0] * dt)
        hx = hx + hs * np.sin(hh) * dt
        hy = hy + hs * np.cos(hh) * dt

        dpx, dpy = rx - hx, ry - hy
        feasible &= np.hypot(dpx, dpy) >= sim.collision_distance
        feasible &= (rx >= sim.road_min_x) & (rx <= sim.road_max_x)
        if gray is not None:
            steps = h + 1
            gx = gray.x + gray.speed * np.sin(gray.heading) * dt * steps
            gy = gray.y + gray.speed * np.cos(gray.heading) * dt * steps
            feasible &= np.hypot(rx - gx, ry - gy) >= sim.collision_distance
        dvy = rs * np.cos(rh) - hs * np.cos(hh)
        total = total + np.where(feasible, _stage_cost(dpx, dpy, dvy, config), 0.0)

    total = np.where(feasible, total, np.inf)
    return total.mean(axis=1)


@dataclass(frozen=True)
class MpcPlan:
    controls: List[Control]
    cost: float
    candidate_index: int
    candidates_evaluated: int


def mpc_plan(
    world: WorldState,
    forecaster: Forecaster,
    ctx: ForecastContext,
    config: MpcConfig,
    sim: SimConfig,
    rng: np.random.Generator,
    candidates: Optional[np.ndarray] = None,
) -> MpcPlan:
    """Pick the τ-step robot control sequence with the lowest expected cost."""
    if candidates is None:
        candidates = candidate_sequences(config.tau)
    forecasts = forecaster(ctx, candidates, config.n_samples, rng)
    costs = rollout_costs(world, candidates, forecasts, config, sim)
    # argmin returns the first minimum, which is the documented tie rule
    best = int(np.argmin(costs))
    controls = [Control(float(u[0]), float(u[1])) for u in candidates[best]]
    return MpcPlan(
        controls=controls,
        cost=float(costs[best]),
        candidate_index=best,
        candidates_evaluated=int(candidates.shape[0]),
    )
