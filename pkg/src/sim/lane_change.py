"""Static LQR lane-change controller with error-feedback quantization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.config.experiment import SimConfig
from src.sim.world import STEER_SET, THROTTLE_SET, Control, WorldState, snap
from src.tasks.lqr import LinSystem, LqrCost, solve_dare


@dataclass(frozen=True)
class LaneChangeGains:
    lateral: np.ndarray
    speed: float


def lane_change_gains(sim: SimConfig, speed: float) -> LaneChangeGains:
    """Gains for the lateral (e, v^x) and longitudinal (v^y error) models.

    A steering increment δ changes v^x by ≈ speed·δ, so the lateral model is
    e' = e + dt·v^x + dt·speed·δ and v^x' = v^x + speed·δ.
    """
    speed = max(speed, 1.0)
    dt = sim.dt
    lateral = LinSystem(
        np.array([[1.0, dt], [0.0, 1.0]]), np.array([[dt * speed], [speed]])
    )
    _, k_lateral = solve_dare(lateral, LqrCost.diagonal(sim.lateral_q, sim.lateral_r))
    longitudinal = LinSystem(np.array([[1.0]]), np.array([[dt]]))
    _, k_speed = solve_dare(longitudinal, LqrCost.diagonal([sim.speed_q], sim.speed_r))
    return LaneChangeGains(lateral=k_lateral[0], speed=float(k_speed[0, 0]))


class LaneChangeController:
    """Drives the robot to ``target_lane_x`` while holding ``target_v``.

    The continuous LQR command is quantized to the legal sets; the quantization
    residual is carried to the next step so the average command tracks it.
    """

    def __init__(self, sim: SimConfig, target_lane_x: float, target_v: float, speed: float):
        self.sim = sim
        self.target_lane_x = target_lane_x
        self.target_v = target_v
        self.gains = lane_change_gains(sim, speed)
        self._residual = np.zeros(2)

    def lateral_error(self, world: WorldState) -> float:
        return world.robot.x - self.target_lane_x

    def raw_command(self, world: WorldState) -> Tuple[float, float]:
        """Unquantized (throttle, steering)."""
        state = np.array([self.lateral_error(world), world.robot.vx])
        steering = -float(self.gains.lateral @ state)
        throttle = -self.gains.speed * (world.robot.vy - self.target_v)
        return throttle, steering

    def done(self, world: WorldState) -> bool:
        return abs(self.lateral_error(world)) < self.sim.lane_tolerance

    def __call__(self, world: WorldState) -> Control:
        desired = np.array(self.raw_command(world)) + self._residual
        throttle = snap(float(desired[0]), THROTTLE_SET)
        steering = snap(float(desired[1]), STEER_SET)
        residual = desired - np.array([throttle, steering])
        # Bounded by one quantization step so saturation cannot wind up
        self._residual = np.clip(residual, [-1.5, -0.04], [1.5, 0.04])
        return Control(throttle, steering)


def lane_change_controller(
    world: WorldState, target_lane_x: float, target_v: float, sim: SimConfig
) -> Control:
    """Single memoryless application of the lane-change law."""
    return LaneChangeController(sim, target_lane_x, target_v, world.robot.speed)(world)
