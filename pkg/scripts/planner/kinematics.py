"""
Planar n-link arm kinematics and time-parameterized collision checking.

Links are capsules (segment + link_radius). Static obstacles are checked at all
times; the object on the belt only after the replan cutoff, since before it the
object is out of reach by construction of the scenario.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import shapely
from shapely.geometry import Polygon

from scripts.planner.errors import ContractViolation

Point = Tuple[float, float]
# (x, y, yaw) of the object centre at its reference time t = 0
ObjectPose = Tuple[float, float, float]


def normalize_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.remainder(angle, 2.0 * math.pi)
    return math.pi if a == -math.pi else a


def symmetric_angle_diff(a: float, b: float, symmetry: int = 1) -> float:
    """Signed difference a - b folded to the nearest of ``symmetry`` equivalent yaws."""
    period = 2.0 * math.pi / symmetry
    return math.remainder(a - b, period)


@dataclass(frozen=True)
class EEPose:
    position: Point
    orientation: float

    def __post_init__(self):
        if not (-math.pi < self.orientation <= math.pi):
            raise ContractViolation(f"orientation {self.orientation} outside (-pi, pi]")


@dataclass(frozen=True)
class ArmModel:
    link_lengths: Tuple[float, ...]
    joint_velocity_limits: Tuple[float, ...]
    base_position: Point = (0.0, 0.0)
    gripper_reach: float = 0.08
    link_radius: float = 0.02
    self_collision: bool = False

    def __post_init__(self):
        object.__setattr__(self, "link_lengths", tuple(float(v) for v in self.link_lengths))
        object.__setattr__(self, "joint_velocity_limits", tuple(float(v) for v in self.joint_velocity_limits))
        if len(self.link_lengths) < 2:
            raise ContractViolation("arm needs n >= 2 links")
        if len(self.joint_velocity_limits) != len(self.link_lengths):
            raise ContractViolation("one velocity limit per joint required")
        if min(self.link_lengths) <= 0 or min(self.joint_velocity_limits) <= 0:
            raise ContractViolation("link lengths and velocity limits must be positive")
        if self.link_radius <= 0 or not (0 < self.gripper_reach < self.link_lengths[-1]):
            raise ContractViolation("invalid link_radius or gripper_reach")

    @property
    def n(self) -> int:
        return len(self.link_lengths)

    @property
    def max_reach(self) -> float:
        return float(sum(self.link_lengths))

    @property
    def max_ee_speed(self) -> float:
        """Upper bound on EE speed: every joint at its limit with the arm fully extended."""
        lengths = np.asarray(self.link_lengths)
        tail = np.cumsum(lengths[::-1])[::-1]
        return float(np.dot(self.joint_velocity_limits, tail))

    @property
    def max_yaw_rate(self) -> float:
        return float(sum(self.joint_velocity_limits))


@dataclass(frozen=True)
class WorldModel:
    conveyor_speed: float
    belt_x: Tuple[float, float]
    belt_y: Tuple[float, float]
    object_shape: Tuple[Point, ...]
    static_obstacles: Tuple[Tuple[Point, ...], ...] = ()
    _obstacle_geoms: np.ndarray = field(init=False, repr=False, compare=False)
    _shape: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.conveyor_speed <= 0:
            raise ContractViolation("conveyor_speed must be > 0")
        shape = tuple(tuple(map(float, p)) for p in self.object_shape)
        obstacles = tuple(tuple(tuple(map(float, p)) for p in poly) for poly in self.static_obstacles)
        object.__setattr__(self, "object_shape", shape)
        object.__setattr__(self, "static_obstacles", obstacles)
        if len(shape) < 3 or Polygon(shape).area <= 0:
            raise ContractViolation("object_shape is degenerate")
        geoms = np.array([Polygon(poly) for poly in obstacles], dtype=object)
        shapely.prepare(geoms)
        object.__setattr__(self, "_obstacle_geoms", geoms)
        object.__setattr__(self, "_shape", np.asarray(shape, dtype=float))

    @property
    def obstacle_geoms(self) -> np.ndarray:
        return self._obstacle_geoms

    @property
    def object_radius(self) -> float:
        """Radius of the object's footprint around its centre."""
        return float(np.max(np.linalg.norm(self._shape, axis=1)))

    def object_center(self, pose: ObjectPose, t: float) -> Point:
        return (pose[0] + self.conveyor_speed * t, pose[1])

    def object_coords(self, pose: ObjectPose, times: np.ndarray) -> np.ndarray:
        """Object polygon vertices advected to each time, shape (m, k, 2)."""
        c, s = math.cos(pose[2]), math.sin(pose[2])
        local = self._shape @ np.array([[c, s], [-s, c]])
        centers = np.stack(
            [pose[0] + self.conveyor_speed * np.asarray(times, dtype=float), np.full(len(times), pose[1])],
            axis=1,
        )
        return local[None, :, :] + centers[:, None, :]

    def object_polygon(self, pose: ObjectPose, t: float) -> Polygon:
        return Polygon(self.object_coords(pose, np.array([t]))[0])


def _check_dims(n: int, q: Sequence[float]) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.shape[0] != n:
        raise ContractViolation(f"expected {n} joint angles, got shape {q.shape}")
    return q


def chain_link_points(link_lengths: Sequence[float], q: Sequence[float], base: Point = (0.0, 0.0)) -> np.ndarray:
    """Joint positions of a planar chain, shape (n+1, 2), base first."""
    lengths = np.asarray(link_lengths, dtype=float)
    q = _check_dims(len(lengths), q)
    phi = np.cumsum(q)
    steps = np.stack([lengths * np.cos(phi), lengths * np.sin(phi)], axis=1)
    points = np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)])
    return points + np.asarray(base, dtype=float)


def chain_forward_kinematics(link_lengths: Sequence[float], q: Sequence[float], base: Point = (0.0, 0.0)) -> EEPose:
    points = chain_link_points(link_lengths, q, base)
    return EEPose(position=(float(points[-1, 0]), float(points[-1, 1])), orientation=normalize_angle(float(np.sum(q))))


def chain_jacobian(link_lengths: Sequence[float], q: Sequence[float]) -> np.ndarray:
    """Analytic 3xn Jacobian of (x, y, yaw) for a planar chain."""
    lengths = np.asarray(link_lengths, dtype=float)
    q = _check_dims(len(lengths), q)
    phi = np.cumsum(q)
    dx = lengths * np.cos(phi)
    dy = lengths * np.sin(phi)
    # column j sums the contributions of links j..n-1
    tail_x = np.cumsum(dx[::-1])[::-1]
    tail_y = np.cumsum(dy[::-1])[::-1]
    return np.vstack([-tail_y, tail_x, np.ones_like(q)])


def forward_kinematics(arm: ArmModel, q: Sequence[float]) -> EEPose:
    return chain_forward_kinematics(arm.link_lengths, q, arm.base_position)


def link_points(arm: ArmModel, q: Sequence[float]) -> np.ndarray:
    return chain_link_points(arm.link_lengths, q, arm.base_position)


def jacobian(arm: ArmModel, q: Sequence[float]) -> np.ndarray:
    return chain_jacobian(arm.link_lengths, q)


def damped_pinv(jac: np.ndarray, damping: float = 1e-3) -> np.ndarray:
    """Damped least-squares pseudo-inverse J^T (J J^T + d^2 I)^-1."""
    jjt = jac @ jac.T
    return jac.T @ np.linalg.solve(jjt + (damping ** 2) * np.eye(jjt.shape[0]), np.eye(jjt.shape[0]))


def inverse_kinematics(
    arm: ArmModel,
    pose: EEPose,
    seed: Optional[Sequence[float]] = None,
    elbow: int = 1,
    tol: float = 1e-9,
    max_iterations: int = 200,
) -> Optional[np.ndarray]:
    """
    Joint angles placing the EE at ``pose``.

    Closed form for three links (wrist point + two-link elbow solution),
    damped least squares from ``seed`` otherwise.

    Returns:
        Joint vector, or None when the pose is out of reach / did not converge
    """
    px, py = pose.position[0] - arm.base_position[0], pose.position[1] - arm.base_position[1]
    if arm.n == 3:
        l1, l2, l3 = arm.link_lengths
        wx = px - l3 * math.cos(pose.orientation)
        wy = py - l3 * math.sin(pose.orientation)
        c2 = (wx * wx + wy * wy - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
        if abs(c2) > 1.0:
            return None
        q2 = elbow * math.acos(max(-1.0, min(1.0, c2)))
        q1 = math.atan2(wy, wx) - math.atan2(l2 * math.sin(q2), l1 + l2 * math.cos(q2))
        q3 = pose.orientation - q1 - q2
        return np.array([normalize_angle(q1), normalize_angle(q2), normalize_angle(q3)])

    q = np.zeros(arm.n) if seed is None else _check_dims(arm.n, seed).copy()
    target = np.array([pose.position[0], pose.position[1]])
    for _ in range(max_iterations):
        ee = forward_kinematics(arm, q)
        err = np.array([
            target[0] - ee.position[0],
            target[1] - ee.position[1],
            normalize_angle(pose.orientation - ee.orientation),
        ])
        if float(np.linalg.norm(err)) < tol:
            return np.array([normalize_angle(v) for v in q])
        step = damped_pinv(jacobian(arm, q), damping=1e-2) @ err
        norm = float(np.max(np.abs(step)))
        if norm > 0.2:
            step *= 0.2 / norm
        q = q + step
    return None


def batch_segments(arm: ArmModel, qs: np.ndarray) -> np.ndarray:
    """Link segments for a batch of configurations, shape (m, n, 2, 2)."""
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    if qs.shape[1] != arm.n:
        raise ContractViolation(f"expected {arm.n} joint angles, got {qs.shape[1]}")
    lengths = np.asarray(arm.link_lengths)
    phi = np.cumsum(qs, axis=1)
    steps = np.stack([lengths * np.cos(phi), lengths * np.sin(phi)], axis=2)
    pts = np.concatenate([np.zeros((qs.shape[0], 1, 2)), np.cumsum(steps, axis=1)], axis=1)
    pts = pts + np.asarray(arm.base_position)
    return np.stack([pts[:, :-1, :], pts[:, 1:, :]], axis=2)


def _without_gripper(arm: ArmModel, segs: np.ndarray) -> np.ndarray:
    out = segs.copy()
    last = out[:, -1, :, :]
    direction = last[:, 1, :] - last[:, 0, :]
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    out[:, -1, 1, :] = last[:, 1, :] - arm.gripper_reach * direction
    return out


def swept_collides(
    arm: ArmModel,
    world: WorldModel,
    qs: np.ndarray,
    times: np.ndarray,
    object_pose: Optional[ObjectPose] = None,
    replan_cutoff: float = 0.0,
    check_static: bool = True,
) -> bool:
    """
    True if any sampled configuration collides.

    ``qs`` (m, n) and ``times`` (m,) are the samples of one motion. The object
    is only checked at samples with t > replan_cutoff, and never against the
    gripper span at the end of the last link.
    """
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    segs = batch_segments(arm, qs)
    m, n = segs.shape[0], segs.shape[1]
    radius = arm.link_radius

    if check_static and len(world.obstacle_geoms):
        lines = shapely.linestrings(segs.reshape(m * n, 2, 2))
        dist = shapely.distance(lines[:, None], world.obstacle_geoms[None, :])
        if bool(np.any(dist < radius)):
            return True

    if check_static and arm.self_collision and n > 2:
        lines = shapely.linestrings(segs.reshape(m * n, 2, 2)).reshape(m, n)
        for i in range(n):
            for j in range(i + 2, n):
                if bool(np.any(shapely.distance(lines[:, i], lines[:, j]) < 2 * radius)):
                    return True

    if object_pose is not None:
        late = times > replan_cutoff
        if np.any(late):
            body = _without_gripper(arm, segs[late])
            k = body.shape[0]
            polys = shapely.polygons(world.object_coords(object_pose, times[late]))
            lines = shapely.linestrings(body.reshape(k * n, 2, 2)).reshape(k, n)
            dist = shapely.distance(lines, polys[:, None])
            if bool(np.any(dist < radius)):
                return True
    return False


def collides(
    arm: ArmModel,
    world: WorldModel,
    q: Sequence[float],
    t: float,
    object_pose: Optional[ObjectPose] = None,
    replan_cutoff: float = 0.0,
) -> bool:
    """Collision test for a single configuration at time t."""
    if t < 0:
        raise ContractViolation("t must be >= 0")
    q = _check_dims(arm.n, q)
    return swept_collides(arm, world, q[None, :], np.array([t]), object_pose, replan_cutoff)
