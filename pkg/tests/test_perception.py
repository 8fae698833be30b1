import math

import numpy as np
import pytest

from scripts.planner.lattice import GoalPose
from scripts.sim.perception import (
    PerceptionModel,
    back_project,
    linear_schedule,
    perception_from_config,
    with_zero_noise,
)


def test_linear_schedule_interpolates_and_clamps():
    schedule = linear_schedule(1.5, 1.0, 0.02, 0.002)
    assert schedule(2.0) == pytest.approx(0.02)
    assert schedule(0.5) == pytest.approx(0.002)
    assert schedule(1.25) == pytest.approx(0.011)


def test_back_project_without_elapsed_time(tiny_stack):
    goal, clamped = back_project((-1.0, 0.5, 0.0), 0.0, 0.2, tiny_stack.region)
    assert goal == GoalPose(1, 0, 0)
    assert not clamped


def test_back_project_shifts_along_the_belt(tiny_stack):
    # 0.5 s at 0.2 m/s: observed at -0.90, was at -1.00 at t = 0
    goal, clamped = back_project((-0.90, 0.5, math.pi / 2), 0.5, 0.2, tiny_stack.region)
    assert goal == GoalPose(1, 0, 1)
    assert not clamped


def test_back_project_clamps_outside_the_region(tiny_stack):
    goal, clamped = back_project((-0.5, 0.5, 0.0), 0.0, 0.2, tiny_stack.region)
    assert clamped
    assert goal.x_idx == 2


def test_back_project_rejects_negative_time(tiny_stack):
    with pytest.raises(ValueError):
        back_project((-1.0, 0.5, 0.0), -0.1, 0.2, tiny_stack.region)


def test_estimates_stay_within_the_error_bound():
    # schedule asks for more than epsilon_p far away; the model caps it
    model = PerceptionModel(
        epsilon_p=0.01,
        camera_position=(0.0, 1.0),
        position_schedule=linear_schedule(1.5, 0.5, 0.05, 0.001),
        yaw_schedule=linear_schedule(1.5, 0.5, 0.3, 0.01),
        update_period=0.5,
        accuracy_distance=1.0,
    )
    rng = np.random.default_rng(2)
    for x in np.linspace(-2.0, 0.0, 200):
        truth = (float(x), 0.5, 0.3)
        est = model.estimate(truth, 0.0, rng)
        assert math.hypot(est.pose[0] - truth[0], est.pose[1] - truth[1]) <= model.epsilon_p + 1e-12
        assert est.position_bound <= model.epsilon_p
        assert model.is_accurate(est) == (est.distance <= 1.0)


def test_zero_noise_estimates_are_exact(tiny_config, tiny_stack):
    model = with_zero_noise(perception_from_config(tiny_config.perception, tiny_stack.region.epsilon_p))
    est = model.estimate((-0.7, 0.5, 0.4), 1.5, np.random.default_rng(0))
    assert est.pose == pytest.approx((-0.7, 0.5, 0.4))
    assert est.time == 1.5


def test_noise_shrinks_toward_the_camera(tiny_config, tiny_stack):
    model = perception_from_config(tiny_config.perception, tiny_stack.region.epsilon_p)
    far = model.error_bound(model.distance_to_camera((-2.0, 0.5)))
    near = model.error_bound(model.distance_to_camera((-0.2, 0.5)))
    assert near < far
    assert near == pytest.approx(tiny_config.perception.error_near)
