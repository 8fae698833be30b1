"""
Synthetic perception with bounded, converging pose error.

Error magnitude shrinks as the object approaches the camera. Every estimate
stays within ε_P of the true pose; the model asserts it.
"""

import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from scripts.planner.kinematics import ObjectPose, normalize_angle
from scripts.planner.lattice import GoalPose, GoalRegion
from utils.logger import get_logger

logger = get_logger(__name__)

# distance to camera -> error bound
NoiseSchedule = Callable[[float], float]


def linear_schedule(far_distance: float, near_distance: float, far_value: float, near_value: float) -> NoiseSchedule:
    """Linear in distance between near and far, clamped outside."""

    def schedule(distance: float) -> float:
        if distance >= far_distance:
            return far_value
        if distance <= near_distance:
            return near_value
        alpha = (distance - near_distance) / (far_distance - near_distance)
        return near_value + alpha * (far_value - near_value)

    return schedule


@dataclass
class PoseEstimate:
    time: float
    pose: ObjectPose
    distance: float
    position_bound: float


class PerceptionModel:
    def __init__(
        self,
        epsilon_p: float,
        camera_position: Tuple[float, float],
        position_schedule: NoiseSchedule,
        yaw_schedule: NoiseSchedule,
        update_period: float,
        accuracy_distance: float,
    ):
        self.epsilon_p = epsilon_p
        self.camera_position = camera_position
        self.position_schedule = position_schedule
        self.yaw_schedule = yaw_schedule
        self.update_period = update_period
        self.accuracy_distance = accuracy_distance

    def distance_to_camera(self, position: Tuple[float, float]) -> float:
        return math.hypot(position[0] - self.camera_position[0], position[1] - self.camera_position[1])

    def error_bound(self, distance: float) -> float:
        return min(self.position_schedule(distance), self.epsilon_p)

    def estimate(self, true_pose_now: ObjectPose, t: float, rng: np.random.Generator) -> PoseEstimate:
        """
        Noisy estimate of the object pose observed at time t.

        Position error is uniform in a disc of the scheduled radius; yaw error
        uniform in the scheduled band.
        """
        distance = self.distance_to_camera(true_pose_now[:2])
        bound = self.error_bound(distance)
        radius = bound * math.sqrt(float(rng.random()))
        angle = 2.0 * math.pi * float(rng.random())
        yaw_bound = self.yaw_schedule(distance)
        yaw_noise = yaw_bound * (2.0 * float(rng.random()) - 1.0)
        pose = (
            true_pose_now[0] + radius * math.cos(angle),
            true_pose_now[1] + radius * math.sin(angle),
            normalize_angle(true_pose_now[2] + yaw_noise),
        )
        error = math.hypot(pose[0] - true_pose_now[0], pose[1] - true_pose_now[1])
        assert error <= self.epsilon_p + 1e-12, "pose estimate violates the perception error bound"
        return PoseEstimate(t, pose, distance, bound)

    def is_accurate(self, estimate: PoseEstimate) -> bool:
        """Past the accuracy mark: the object is within accuracy_distance of the camera."""
        return estimate.distance <= self.accuracy_distance


def back_project(
    estimate: ObjectPose, dt: float, speed: float, region: GoalRegion
) -> Tuple[GoalPose, bool]:
    """
    Shift an estimate back along the belt by speed*dt and snap it into the goal region.

    Returns:
        (goal cell, whether the pose had to be clamped)
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    goal, clamped = region.snap(estimate[0] - speed * dt, estimate[1], estimate[2])
    if clamped:
        logger.warning(
            "⚠️ Back-projected pose outside the goal region, clamped",
            x=round(estimate[0] - speed * dt, 4),
            y=round(estimate[1], 4),
            goal=tuple(goal),
        )
    return goal, clamped


def perception_from_config(cfg, epsilon_p: float) -> PerceptionModel:
    """Build the default linear-schedule model from the perception config section."""
    return PerceptionModel(
        epsilon_p=epsilon_p,
        camera_position=tuple(cfg.camera_position),
        position_schedule=linear_schedule(cfg.far_distance, cfg.near_distance, cfg.error_far, cfg.error_near),
        yaw_schedule=linear_schedule(
            cfg.far_distance,
            cfg.near_distance,
            math.radians(cfg.yaw_error_far_deg),
            math.radians(cfg.yaw_error_near_deg),
        ),
        update_period=cfg.update_period,
        accuracy_distance=cfg.accuracy_distance,
    )


def zero_noise(_: float) -> float:
    return 0.0


def with_zero_noise(model: PerceptionModel) -> PerceptionModel:
    return PerceptionModel(
        model.epsilon_p, model.camera_position, zero_noise, zero_noise, model.update_period, model.accuracy_distance
    )
