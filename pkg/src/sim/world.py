"""Kinematic two-lane world.

Cars follow a unicycle model with a per-step heading increment. Positions are
(x lateral, y longitudinal) in metres; heading 0 points along +y.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np

from src.config.experiment import SimConfig
from src.utils.errors import ContractViolation

THROTTLE_SET: Tuple[float, ...] = (-1.5, 0.0, 1.5)
STEER_SET: Tuple[float, ...] = (-0.04, 0.0, 0.04)


@dataclass(frozen=True)
class Control:
    throttle: float = 0.0
    steering: float = 0.0

    def __post_init__(self) -> None:
        if self.throttle not in THROTTLE_SET or self.steering not in STEER_SET:
            raise ContractViolation(
                f"Illegal control ({self.throttle}, {self.steering})."
            )

    @property
    def index(self) -> int:
        return THROTTLE_SET.index(self.throttle) * len(STEER_SET) + STEER_SET.index(
            self.steering
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.throttle, self.steering])

    @classmethod
    def from_index(cls, index: int) -> "Control":
        return JOINT_CONTROLS[index]


# Enumeration order: throttle major, steering minor
JOINT_CONTROLS: Tuple[Control, ...] = tuple(
    Control(throttle, steering) for throttle in THROTTLE_SET for steering in STEER_SET
)
JOINT_ARRAY = np.array([control.as_array() for control in JOINT_CONTROLS])

IDLE = Control(0.0, 0.0)


def snap(value: float, choices: Tuple[float, ...]) -> float:
    """Nearest legal value; ties go to the earlier (smaller) choice."""
    distances = [abs(value - choice) for choice in choices]
    return choices[int(np.argmin(distances))]


@dataclass(frozen=True)
class ControlTuple:
    robot: Control
    human: Control


@dataclass(frozen=True)
class CarState:
    x: float
    y: float
    speed: float
    heading: float = 0.0

    def __post_init__(self) -> None:
        values = (self.x, self.y, self.speed, self.heading)
        if not all(np.isfinite(values)):
            raise ContractViolation("Car state must be finite.")
        if self.speed < 0:
            raise ContractViolation("Car speed must be non-negative.")

    @property
    def vx(self) -> float:
        return self.speed * float(np.sin(self.heading))

    @property
    def vy(self) -> float:
        return self.speed * float(np.cos(self.heading))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy])

    def step(self, control: Control, dt: float) -> "CarState":
        heading = self.heading + control.steering
        speed = max(0.0, self.speed + control.throttle * dt)
        return CarState(
            x=self.x + speed * float(np.sin(heading)) * dt,
            y=self.y + speed * float(np.cos(heading)) * dt,
            speed=speed,
            heading=heading,
        )

    def to_dict(self) -> Dict[str, float]:
        return {"x": self.x, "y": self.y, "speed": self.speed, "heading": self.heading}


@dataclass(frozen=True)
class WorldState:
    robot: CarState
    human: CarState
    gray: Optional[CarState] = None
    t: int = 0
    dt: float = 0.1

    @property
    def gap(self) -> float:
        """Longitudinal gap p^{ry} − p^{hy}."""
        return self.robot.y - self.human.y

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.robot.position - self.human.position))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t": self.t,
            "robot": self.robot.to_dict(),
            "human": self.human.to_dict(),
            "gray": self.gray.to_dict() if self.gray is not None else None,
        }


def step(
    world: WorldState,
    controls: ControlTuple,
    dt: Optional[float] = None,
) -> WorldState:
    """Advance every car one step; the gray car keeps its speed and heading."""
    dt = world.dt if dt is None else dt
    return replace(
        world,
        robot=world.robot.step(controls.robot, dt),
        human=world.human.step(controls.human, dt),
        gray=world.gray.step(IDLE, dt) if world.gray is not None else None,
        t=world.t + 1,
        dt=dt,
    )


def collided(world: WorldState, sim: SimConfig) -> bool:
    if world.distance < sim.collision_distance:
        return True
    if world.gray is not None:
        gray_distance = np.linalg.norm(world.robot.position - world.gray.position)
        return bool(gray_distance < sim.collision_distance)
    return False


def on_road(car: CarState, sim: SimConfig) -> bool:
    return sim.road_min_x <= car.x <= sim.road_max_x
