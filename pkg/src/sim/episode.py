"""Episodes of the robot controller against a synthetic driver.

In the lane swap the robot negotiates a gap with the MPC and then hands over
to the lane-change law. In the lane-change scenario the robot never leaves
its lane: the MPC runs for the whole episode over zero-steering candidates,
and the commence metrics mark when a safe gap first opens.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np

from src.config.experiment import InitRanges, MpcConfig, SimConfig
from src.forecast.features import HistoryBuffer, history_row
from src.sim.driver import PidState, SyntheticDriverParams, synthetic_driver
from src.sim.lane_change import LaneChangeController
from src.sim.mpc import (
    ForecastContext,
    Forecaster,
    candidate_sequences,
    mpc_cost,
    mpc_plan,
)
from src.sim.world import (
    IDLE,
    CarState,
    Control,
    ControlTuple,
    WorldState,
    collided,
    step,
)
from src.utils.errors import ConfigurationError

log = logging.getLogger(__name__)

Scenario = Literal["lane-swap", "lane-change"]
SCENARIO_CONTEXT = {"lane-swap": 0, "lane-change": 1}


def scenario_context(scenario: str) -> int:
    try:
        return SCENARIO_CONTEXT[scenario]
    except KeyError as exc:
        raise ConfigurationError(f"Unknown scenario {scenario!r}.") from exc


@dataclass(frozen=True)
class InitialState:
    robot_speed: float
    human_speed: float
    gap: float
    gray_gap: Optional[float] = None
    gray_speed: Optional[float] = None

    def to_world(self, sim: SimConfig) -> WorldState:
        gray = None
        if self.gray_gap is not None:
            gray = CarState(sim.robot_lane_x, self.gray_gap, self.gray_speed or 0.0)
        return WorldState(
            robot=CarState(sim.robot_lane_x, 0.0, self.robot_speed),
            human=CarState(sim.human_lane_x, self.gap, self.human_speed),
            gray=gray,
            t=0,
            dt=sim.dt,
        )


def generate_initial_states(
    n: int, ranges: InitRanges, seed: int, scenario: Scenario = "lane-swap"
) -> List[InitialState]:
    """Uniform draws over the configured ranges; |gap| below min_gap is redrawn."""
    if n < 1:
        raise ConfigurationError("At least one initial state is required.")
    low, high = ranges.gap
    if max(abs(low), abs(high)) < ranges.min_gap:
        raise ConfigurationError("The gap range never reaches the minimum spacing.")
    with_gray = scenario_context(scenario) == 1
    rng = np.random.default_rng(seed)
    inits = []
    for _ in range(n):
        robot_speed = float(rng.uniform(*ranges.robot_speed))
        human_speed = float(rng.uniform(*ranges.human_speed))
        gap = float(rng.uniform(low, high))
        while abs(gap) < ranges.min_gap:
            gap = float(rng.uniform(low, high))
        gray_gap = gray_speed = None
        if with_gray:
            gray_gap = float(rng.uniform(*ranges.gray_gap))
            gray_speed = float(rng.uniform(*ranges.gray_speed))
        inits.append(InitialState(robot_speed, human_speed, gap, gray_gap, gray_speed))
    return inits


@dataclass(frozen=True)
class StepRecord:
    world: WorldState
    robot: Control
    human: Control
    cost: float

    def to_dict(self) -> dict:
        return {
            "t": self.world.t,
            "world": self.world.to_dict(),
            "controls": {
                "robot": [self.robot.throttle, self.robot.steering],
                "human": [self.human.throttle, self.human.steering],
            },
            "J": self.cost,
        }


@dataclass(frozen=True)
class Episode:
    scenario: str
    steps: List[StepRecord] = field(default_factory=list)
    final_world: Optional[WorldState] = None
    commence_step: Optional[int] = None
    commence_distance: Optional[float] = None
    collided: bool = False
    completed: bool = False

    @property
    def commence_time(self) -> Optional[float]:
        """Seconds until the gap trigger fired; None means it never fired."""
        if self.commence_step is None or self.final_world is None:
            return None
        return self.commence_step * self.final_world.dt

    @property
    def mean_cost(self) -> float:
        if not self.steps:
            return float("nan")
        return float(np.mean([record.cost for record in self.steps]))

    @property
    def human_mean_speed(self) -> float:
        return float(np.mean([record.world.human.vy for record in self.steps]))

    def metrics(self) -> dict:
        return {
            "commence_time": self.commence_time,
            "commence_distance": self.commence_distance,
            "mean_cost": self.mean_cost,
            "collided": self.collided,
            "completed": self.completed,
            "steps": len(self.steps),
        }


def run_episode(
    scenario: Scenario,
    forecaster: Forecaster,
    driver: SyntheticDriverParams,
    init: InitialState,
    sim: SimConfig,
    mpc: MpcConfig,
    seed: int,
    window: int = 10,
) -> Episode:
    """Play one episode.

    Lane swap: MPC until the gap trigger, then the lane-change law. Lane
    change: MPC throughout over straight-ahead candidates only; the episode
    completes when it survives ``sim.max_steps`` without a collision.
    """
    context = scenario_context(scenario)
    lane_keeping = context == 1
    world = init.to_world(sim)
    if (world.gray is not None) != (context == 1):
        raise ConfigurationError("Only the lane-change scenario has a gray car.")
    rng = np.random.default_rng(seed)
    candidates = candidate_sequences(mpc.tau, lane_keeping)
    history = HistoryBuffer(window)
    history.push(history_row(world, IDLE, IDLE, sim))

    driver_state = PidState()
    human_control = IDLE
    queue: List[Control] = []
    controller: Optional[LaneChangeController] = None
    commence_step = commence_distance = None
    records: List[StepRecord] = []
    hit = done = False

    for _ in range(sim.max_steps):
        if commence_step is None and abs(world.gap) >= sim.trigger_gap:
            commence_step, commence_distance = world.t, world.distance
            if not lane_keeping:
                controller = LaneChangeController(
                    sim, sim.human_lane_x, world.robot.vy, world.robot.speed
                )

        if controller is None:
            if not queue:
                ctx = ForecastContext(history.array(), human_control, context)
                queue = list(mpc_plan(world, forecaster, ctx, mpc, sim, rng, candidates).controls)
            robot_control = queue.pop(0)
        else:
            robot_control = controller(world)
        human_control, driver_state = synthetic_driver(world, driver, driver_state)

        next_world = step(world, ControlTuple(robot_control, human_control))
        cost = mpc_cost(next_world, mpc) if next_world.distance > 0 else float("inf")
        records.append(StepRecord(world, robot_control, human_control, cost))
        world = next_world
        history.push(history_row(world, robot_control, human_control, sim))

        if collided(world, sim):
            hit = True
            break
        if controller is not None and controller.done(world):
            done = True
            break

    if lane_keeping and not hit:
        done = True
    if hit:
        log.warning("Episode ended in a collision", extra={"t": world.t, "scenario": scenario})
    return Episode(
        scenario=scenario,
        steps=records,
        final_world=world,
        commence_step=commence_step,
        commence_distance=commence_distance,
        collided=hit,
        completed=done,
    )


def write_episode_log(path: Path | str, episode: Episode) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for record in episode.steps:
            handle.write(json.dumps(record.to_dict()) + "\n")
