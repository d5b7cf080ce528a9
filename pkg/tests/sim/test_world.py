import numpy as np
import pytest

from src.config.experiment import SimConfig
from src.sim.world import (
    IDLE,
    JOINT_CONTROLS,
    STEER_SET,
    THROTTLE_SET,
    CarState,
    Control,
    ControlTuple,
    WorldState,
    collided,
    on_road,
    snap,
    step,
)
from src.utils.errors import ContractViolation


def _world(robot=None, human=None, gray=None):
    return WorldState(
        robot=robot or CarState(0.0, 0.0, 8.0),
        human=human or CarState(3.5, 10.0, 8.0),
        gray=gray,
        dt=0.1,
    )


def test_throttle_from_rest():
    car = CarState(0.0, 0.0, 0.0).step(Control(1.5, 0.0), 0.1)
    assert car.speed == pytest.approx(0.15)
    assert car.y == pytest.approx(0.015)
    assert car.x == pytest.approx(0.0)


def test_coasting_keeps_speed_and_heading():
    car = CarState(1.0, 2.0, 8.0)
    for _ in range(10):
        car = car.step(IDLE, 0.1)
    assert car.speed == pytest.approx(8.0)
    assert car.heading == 0.0
    assert car.y == pytest.approx(10.0)
    assert car.x == pytest.approx(1.0)


def test_braking_clamps_speed_at_zero():
    car = CarState(0.0, 0.0, 0.1).step(Control(-1.5, 0.0), 0.1)
    assert car.speed == 0.0
    assert car.y == 0.0


def test_steering_is_a_heading_increment():
    car = CarState(0.0, 0.0, 5.0)
    for _ in range(3):
        car = car.step(Control(0.0, 0.04), 0.1)
    assert car.heading == pytest.approx(0.12)
    assert car.x > 0


def test_illegal_controls_rejected():
    with pytest.raises(ContractViolation):
        Control(1.0, 0.0)
    with pytest.raises(ContractViolation):
        Control(0.0, 0.05)


def test_joint_index_is_throttle_major():
    assert len(JOINT_CONTROLS) == 9
    for index, control in enumerate(JOINT_CONTROLS):
        assert control.index == index
        assert Control.from_index(index) == control
        assert index == THROTTLE_SET.index(control.throttle) * 3 + STEER_SET.index(
            control.steering
        )
    assert Control(1.5, -0.04).index == 6


def test_snap_picks_nearest_and_breaks_ties_low():
    assert snap(1.2, THROTTLE_SET) == 1.5
    assert snap(-9.0, THROTTLE_SET) == -1.5
    assert snap(0.75, THROTTLE_SET) == 0.0
    assert snap(0.021, STEER_SET) == 0.04


def test_car_state_validation():
    with pytest.raises(ContractViolation):
        CarState(0.0, 0.0, -1.0)
    with pytest.raises(ContractViolation):
        CarState(float("nan"), 0.0, 1.0)


def test_step_advances_time_and_gray_car_coasts():
    world = _world(gray=CarState(0.0, -20.0, 7.0))
    nxt = step(world, ControlTuple(Control(1.5, 0.0), IDLE))
    assert nxt.t == 1
    assert nxt.gray.speed == 7.0
    assert nxt.gray.y == pytest.approx(-19.3)
    assert nxt.robot.speed == pytest.approx(8.15)
    assert nxt.human.speed == 8.0


def test_gap_and_distance():
    world = _world(robot=CarState(0.0, 4.0, 8.0), human=CarState(3.0, 0.0, 8.0))
    assert world.gap == 4.0
    assert world.distance == pytest.approx(5.0)


def test_collision_checks_both_cars():
    sim = SimConfig()
    assert not collided(_world(), sim)
    assert collided(_world(human=CarState(0.5, 1.0, 8.0)), sim)
    assert collided(_world(gray=CarState(0.0, -1.0, 7.0)), sim)
    assert not collided(_world(gray=CarState(0.0, -20.0, 7.0)), sim)


def test_on_road_bounds():
    sim = SimConfig()
    assert on_road(CarState(sim.road_min_x, 0.0, 1.0), sim)
    assert not on_road(CarState(sim.road_max_x + 0.01, 0.0, 1.0), sim)


def test_to_dict_serializes_all_cars():
    document = _world().to_dict()
    assert document["gray"] is None
    assert set(document["robot"]) == {"x", "y", "speed", "heading"}
    assert np.isclose(document["human"]["x"], 3.5)
