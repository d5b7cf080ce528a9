"""Synthetic risk-parameterized human driver.

The driver picks a target speed from a rule on the relative gap to the robot
and the free space behind the gray car, then tracks it with a PID controller
whose output is snapped to the legal throttle set. Steering stays 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

from src.config.experiment import DriverConfig
from src.sim.world import THROTTLE_SET, Control, WorldState, snap
from src.utils.errors import ConfigurationError


@dataclass(frozen=True)
class SyntheticDriverParams:
    gamma: float
    v_high: float = 10.0
    v_low: float = 5.0
    d_safe: float = 10.0
    kp: float = 0.5
    ki: float = 0.0
    kd: float = 0.1

    def __post_init__(self) -> None:
        if not -1.0 <= self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in [-1, 1].")
        if not self.v_high > self.v_low > 0:
            raise ConfigurationError("Driver speeds must satisfy v_high > v_low > 0.")
        if self.d_safe <= 0:
            raise ConfigurationError("d_safe must be positive.")

    @classmethod
    def from_config(cls, config: DriverConfig, gamma: float) -> "SyntheticDriverParams":
        return cls(
            gamma=gamma,
            v_high=config.v_high,
            v_low=config.v_low,
            d_safe=config.d_safe,
            kp=config.kp,
            ki=config.ki,
            kd=config.kd,
        )


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    previous_error: Optional[float] = None


def relative_gap(world: WorldState) -> float:
    """D_rel = (p^{hy} − p^{ry}) + (v^{hy} − v^{ry})."""
    return (world.human.y - world.robot.y) + (world.human.vy - world.robot.vy)


def target_velocity(world: WorldState, params: SyntheticDriverParams) -> float:
    # Without a gray car there is nothing to keep clear of
    gray_clear = world.gray is None or world.human.y - world.gray.y >= params.d_safe
    if params.gamma * relative_gap(world) >= 0 and gray_clear:
        return params.v_high
    return params.v_low


def synthetic_driver(
    world: WorldState,
    params: SyntheticDriverParams,
    state: PidState = PidState(),
) -> Tuple[Control, PidState]:
    error = target_velocity(world, params) - world.human.vy
    integral = state.integral + error * world.dt
    derivative = (
        0.0 if state.previous_error is None else (error - state.previous_error) / world.dt
    )
    command = params.kp * error + params.ki * integral + params.kd * derivative
    control = Control(snap(command, THROTTLE_SET), 0.0)
    return control, PidState(integral=integral, previous_error=error)
