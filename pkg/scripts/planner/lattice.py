"""
The implicit time-augmented lattice: states (q, t), goals, and motion primitives.

States live on a joint grid of resolution Δθ and a time grid of δ_t. Every
primitive lasts an integer number of δ_t steps so that any state produced by
any search is on the time grid; latching and the backward preprocessing loop
depend on this.
"""

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from scripts.planner.errors import ContractViolation
from scripts.planner.kinematics import (
    ArmModel,
    EEPose,
    ObjectPose,
    WorldModel,
    damped_pinv,
    forward_kinematics,
    jacobian,
    normalize_angle,
    swept_collides,
    symmetric_angle_diff,
)

EPS = 1e-9

# per-lattice memo limits
EE_CACHE_SIZE = 1 << 16
STATIC_CACHE_SIZE = 1 << 18
GRASP_CACHE_SIZE = 1 << 12


class State(NamedTuple):
    q_disc: Tuple[int, ...]
    t_disc: int


class GoalPose(NamedTuple):
    x_idx: int
    y_idx: int
    yaw_idx: int


class PrimitiveKind(str, Enum):
    STATIC_JOINT = "static-joint"
    WAIT = "wait"
    DYNAMIC_GRASP = "dynamic-grasp"
    LATCH = "latch"
    INTERPOLATED = "interpolated"


@dataclass(frozen=True)
class Primitive:
    kind: PrimitiveKind
    duration: float
    joint_index: Optional[int] = None
    direction: int = 0
    target_state: Optional[State] = None

    def __post_init__(self):
        if self.duration <= 0:
            raise ContractViolation("primitive duration must be > 0")


class StateCodec:
    """Bijective integer packing of (q_disc, t_disc)."""

    def __init__(self, n: int, levels: int):
        self.n = n
        self.levels = levels

    def encode(self, state: State) -> int:
        key = state.t_disc
        for idx in reversed(state.q_disc):
            key = key * self.levels + idx
        return key

    def decode(self, key: int) -> State:
        q = []
        for _ in range(self.n):
            key, idx = divmod(key, self.levels)
            q.append(idx)
        return State(tuple(q), key)


@dataclass(frozen=True)
class GoalRegion:
    x_exec: float
    epsilon_p: float
    y_min: float
    y_max: float
    x_resolution: float
    y_resolution: float
    yaw_resolution: float

    @property
    def x_min(self) -> float:
        return self.x_exec - 2.0 * self.epsilon_p

    @property
    def x_max(self) -> float:
        return self.x_exec + 2.0 * self.epsilon_p

    @property
    def nx(self) -> int:
        return int(round(4.0 * self.epsilon_p / self.x_resolution)) + 1

    @property
    def ny(self) -> int:
        return int(round((self.y_max - self.y_min) / self.y_resolution)) + 1

    @property
    def nyaw(self) -> int:
        return int(round(2.0 * math.pi / self.yaw_resolution))

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nyaw

    def contains(self, goal: GoalPose) -> bool:
        return 0 <= goal.x_idx < self.nx and 0 <= goal.y_idx < self.ny and 0 <= goal.yaw_idx < self.nyaw

    def key(self, goal: GoalPose) -> int:
        if not self.contains(goal):
            raise ContractViolation(f"goal {goal} outside the goal region")
        return (goal.x_idx * self.ny + goal.y_idx) * self.nyaw + goal.yaw_idx

    def from_key(self, key: int) -> GoalPose:
        rest, yaw_idx = divmod(key, self.nyaw)
        x_idx, y_idx = divmod(rest, self.ny)
        goal = GoalPose(x_idx, y_idx, yaw_idx)
        if not self.contains(goal):
            raise ContractViolation(f"goal key {key} outside the goal region")
        return goal

    def goals(self) -> List[GoalPose]:
        """G_full in key order."""
        return [self.from_key(k) for k in range(self.size)]

    def pose_of(self, goal: GoalPose) -> ObjectPose:
        return (
            self.x_min + goal.x_idx * self.x_resolution,
            self.y_min + goal.y_idx * self.y_resolution,
            normalize_angle(goal.yaw_idx * self.yaw_resolution),
        )

    def snap(self, x: float, y: float, yaw: float) -> Tuple[GoalPose, bool]:
        """Nearest goal cell; the flag reports whether the pose had to be clamped into the region."""
        xi = int(round((x - self.x_min) / self.x_resolution))
        yi = int(round((y - self.y_min) / self.y_resolution))
        clamped = not (0 <= xi < self.nx and 0 <= yi < self.ny)
        xi = min(max(xi, 0), self.nx - 1)
        yi = min(max(yi, 0), self.ny - 1)
        ki = int(round(normalize_angle(yaw) / self.yaw_resolution)) % self.nyaw
        return GoalPose(xi, yi, ki), clamped


@dataclass(frozen=True)
class LatticeParams:
    joint_resolution: float
    joint_step: float
    time_step: float
    horizon: float
    replan_cutoff: float
    trigger_distance: float = 0.15
    trigger_angle: float = math.radians(45.0)
    grasp_gain: float = 2.0
    integration_step: float = 0.05
    close_duration: float = 0.5
    grasp_timeout: float = 3.0
    enclosure_position_tol: float = 0.01
    enclosure_yaw_tol: float = math.radians(10.0)
    grasp_symmetry: int = 2
    collision_angle_step: float = math.radians(5.0)

    @property
    def levels(self) -> int:
        return int(round(2.0 * math.pi / self.joint_resolution))

    @property
    def step_indices(self) -> int:
        return int(round(self.joint_step / self.joint_resolution))

    @property
    def horizon_disc(self) -> int:
        return int(math.floor(self.horizon / self.time_step + EPS))

    @property
    def cutoff_disc(self) -> int:
        return int(round(self.replan_cutoff / self.time_step))


@dataclass
class GraspResult:
    success: bool
    terminal: Optional[State]
    # rows of (t, q_1..q_n)
    trajectory: np.ndarray
    reason: str = ""
    primitive: Optional[Primitive] = None


class Lattice:
    """Successor generation and primitive evaluation over shared immutable models."""

    def __init__(self, arm: ArmModel, world: WorldModel, region: GoalRegion, params: LatticeParams):
        self.arm = arm
        self.world = world
        self.region = region
        self.params = params
        self.levels = params.levels
        self.codec = StateCodec(arm.n, self.levels)
        self._vlim = np.asarray(arm.joint_velocity_limits)
        # δ_t steps for one static move of each joint at its nominal velocity
        self._static_steps = [
            max(1, int(math.ceil(params.joint_step / v / params.time_step - EPS))) for v in arm.joint_velocity_limits
        ]
        self._ee_pose = lru_cache(maxsize=EE_CACHE_SIZE)(self._forward_kinematics)
        self._static_collides = lru_cache(maxsize=STATIC_CACHE_SIZE)(self._static_motion_collides)
        self._grasp = lru_cache(maxsize=GRASP_CACHE_SIZE)(self._simulate_grasp)
        self._clearance = arm.max_reach + world.object_radius + arm.link_radius

    # ------------------------------------------------------------------ states

    def q_of(self, state: State) -> np.ndarray:
        return np.asarray(state.q_disc, dtype=float) * self.params.joint_resolution

    def time_of(self, state: State) -> float:
        return state.t_disc * self.params.time_step

    def snap_q(self, q: Sequence[float]) -> Tuple[int, ...]:
        res = self.params.joint_resolution
        return tuple(int(round(float(v) / res)) % self.levels for v in q)

    def make_state(self, q: Sequence[float], t_disc: int = 0) -> State:
        if t_disc < 0:
            raise ContractViolation("t_disc must be >= 0")
        if len(q) != self.arm.n:
            raise ContractViolation(f"expected {self.arm.n} joint angles")
        return State(self.snap_q(q), int(t_disc))

    def key(self, state: State) -> int:
        return self.codec.encode(state)

    def ee_pose(self, state: State) -> EEPose:
        return self._ee_pose(state.q_disc)

    def _forward_kinematics(self, q_disc: Tuple[int, ...]) -> EEPose:
        return forward_kinematics(self.arm, np.asarray(q_disc, dtype=float) * self.params.joint_resolution)

    def cache_info(self) -> Dict[str, object]:
        """Hit/miss counters and sizes of the per-lattice memo tables."""
        return {
            "ee_pose": self._ee_pose.cache_info(),
            "static_motion": self._static_collides.cache_info(),
            "dynamic_grasp": self._grasp.cache_info(),
        }

    def index_delta(self, q_from: Tuple[int, ...], q_to: Tuple[int, ...]) -> np.ndarray:
        """Shortest signed per-joint index difference on the wrapped joint grid."""
        half = self.levels // 2
        diff = (np.asarray(q_to) - np.asarray(q_from) + half) % self.levels - half
        return diff

    # ------------------------------------------------------------------ object

    def object_pose(self, goal: GoalPose) -> ObjectPose:
        return self.region.pose_of(goal)

    def exit_time(self, goal: GoalPose) -> float:
        """Time at which the object centre leaves the belt."""
        x0 = self.object_pose(goal)[0]
        return (self.world.belt_x[1] - x0) / self.world.conveyor_speed

    def on_belt(self, goal_pose: ObjectPose, t: float) -> bool:
        return goal_pose[0] + self.world.conveyor_speed * t <= self.world.belt_x[1] + EPS

    def _object_near(self, goal_pose: ObjectPose, t_from: float, t_to: float) -> bool:
        bx, by = self.arm.base_position
        xa = goal_pose[0] + self.world.conveyor_speed * t_from
        xb = goal_pose[0] + self.world.conveyor_speed * t_to
        nearest = min(max(bx, xa), xb)
        return math.hypot(nearest - bx, goal_pose[1] - by) <= self._clearance

    # ------------------------------------------------------------------ collision

    def motion_collides(
        self,
        q_from: Tuple[int, ...],
        delta: Sequence[int],
        t_from: float,
        t_to: float,
        goal: Optional[GoalPose] = None,
    ) -> bool:
        """Linear joint-space motion from q_from by ``delta`` grid steps between t_from and t_to."""
        delta = tuple(int(d) for d in delta)
        if self._static_collides(tuple(q_from), delta):
            return True

        if goal is None or t_to <= self.params.replan_cutoff:
            return False
        pose = self.object_pose(goal)
        if not self._object_near(pose, t_from, t_to):
            return False
        q0, q1, n_samples = self._motion_samples(q_from, delta)
        n_time = int(math.ceil(self.world.conveyor_speed * (t_to - t_from) / self.arm.link_radius - EPS))
        n_samples = max(n_samples, n_time, 1)
        alphas = np.linspace(0.0, 1.0, n_samples + 1)
        qs = q0[None, :] + alphas[:, None] * (q1 - q0)[None, :]
        times = t_from + alphas * (t_to - t_from)
        return swept_collides(
            self.arm, self.world, qs, times, pose, self.params.replan_cutoff, check_static=False
        )

    def state_collides(self, state: State, goal: Optional[GoalPose] = None) -> bool:
        t = self.time_of(state)
        return self.motion_collides(state.q_disc, (0,) * self.arm.n, t, t, goal)

    def _motion_samples(self, q_from: Tuple[int, ...], delta: Tuple[int, ...]) -> Tuple[np.ndarray, np.ndarray, int]:
        res = self.params.joint_resolution
        q0 = np.asarray(q_from, dtype=float) * res
        q1 = q0 + np.asarray(delta, dtype=float) * res
        span = float(np.max(np.abs(q1 - q0))) if delta else 0.0
        return q0, q1, max(1, int(math.ceil(span / self.params.collision_angle_step - EPS)))

    def _static_motion_collides(self, q_from: Tuple[int, ...], delta: Tuple[int, ...]) -> bool:
        q0, q1, n_samples = self._motion_samples(q_from, delta)
        alphas = np.linspace(0.0, 1.0, n_samples + 1)
        qs = q0[None, :] + alphas[:, None] * (q1 - q0)[None, :]
        return swept_collides(self.arm, self.world, qs, np.zeros(len(alphas)))

    # ------------------------------------------------------------------ primitives

    def successors(self, s: State, g: GoalPose) -> List[Tuple[State, Primitive, float]]:
        """
        Static joint moves (each joint, both directions), one wait, and a dynamic
        grasp when triggered. Colliding or past-horizon successors are dropped.
        """
        out: List[Tuple[State, Primitive, float]] = []
        dt = self.params.time_step
        horizon = self.params.horizon_disc
        t_from = self.time_of(s)
        step = self.params.step_indices

        for j in range(self.arm.n):
            k = self._static_steps[j]
            if s.t_disc + k > horizon:
                continue
            for direction in (1, -1):
                delta = [0] * self.arm.n
                delta[j] = direction * step
                if self.motion_collides(s.q_disc, delta, t_from, t_from + k * dt, g):
                    continue
                q_to = list(s.q_disc)
                q_to[j] = (q_to[j] + direction * step) % self.levels
                prim = Primitive(PrimitiveKind.STATIC_JOINT, k * dt, joint_index=j, direction=direction)
                out.append((State(tuple(q_to), s.t_disc + k), prim, k * dt))

        if s.t_disc + 1 <= horizon:
            if not self.motion_collides(s.q_disc, (0,) * self.arm.n, t_from, t_from + dt, g):
                out.append((State(s.q_disc, s.t_disc + 1), Primitive(PrimitiveKind.WAIT, dt), dt))

        if self.trigger_dynamic(s, g):
            result = self.dynamic_grasp(s, g)
            if result.success:
                out.append((result.terminal, result.primitive, result.primitive.duration))
        return out

    def trigger_dynamic(self, s: State, g: GoalPose) -> bool:
        pose = self.object_pose(g)
        t = self.time_of(s)
        if not self.on_belt(pose, t):
            return False
        ee = self.ee_pose(s)
        cx, cy = self.world.object_center(pose, t)
        if math.hypot(cx - ee.position[0], cy - ee.position[1]) >= self.params.trigger_distance:
            return False
        yaw_err = abs(symmetric_angle_diff(ee.orientation, pose[2], self.params.grasp_symmetry))
        return yaw_err < self.params.trigger_angle

    def _grasp_error(self, q: np.ndarray, pose: ObjectPose, yaw_goal: float, t: float) -> np.ndarray:
        ee = forward_kinematics(self.arm, q)
        cx, cy = self.world.object_center(pose, t)
        return np.array([
            cx - ee.position[0],
            cy - ee.position[1],
            math.remainder(yaw_goal - ee.orientation, 2.0 * math.pi),
        ])

    def _enclosed(self, err: np.ndarray) -> bool:
        return (
            math.hypot(err[0], err[1]) < self.params.enclosure_position_tol
            and abs(err[2]) < self.params.enclosure_yaw_tol
        )

    def dynamic_grasp(self, s: State, g: GoalPose) -> GraspResult:
        """
        Intercept-and-track maneuver under a damped Jacobian pseudo-inverse law.

        The approach phase drives the EE toward the advected grasp pose with a
        conveyor feed-forward, joint rates scaled into the limits. Once enclosed,
        the gripper tracks the object for close_duration, extended so the
        primitive ends on the δ_t grid. Results are memoised per (state, goal).
        """
        return self._grasp(s, g)

    def _simulate_grasp(self, s: State, g: GoalPose) -> GraspResult:
        if not self.trigger_dynamic(s, g):
            raise ContractViolation(f"dynamic grasp requested from untriggered state {s} for goal {g}")

        p = self.params
        pose = self.object_pose(g)
        speed = self.world.conveyor_speed
        feed = np.array([speed, 0.0, 0.0])
        t0 = self.time_of(s)
        q = self.q_of(s)
        ee0 = self.ee_pose(s)
        # fix the symmetric yaw branch nearest the starting EE yaw
        yaw_goal = ee0.orientation - symmetric_angle_diff(ee0.orientation, pose[2], p.grasp_symmetry)

        t = t0
        rows = [np.concatenate([[t], q])]

        def fail(reason: str) -> GraspResult:
            return GraspResult(False, None, np.vstack(rows), reason)

        while True:
            err = self._grasp_error(q, pose, yaw_goal, t)
            if self._enclosed(err):
                break
            if t - t0 >= p.grasp_timeout - EPS:
                return fail("timeout")
            if not self.on_belt(pose, t):
                return fail("object left the belt")
            qdot = damped_pinv(jacobian(self.arm, q)) @ (feed + p.grasp_gain * err)
            scale = float(np.max(np.abs(qdot) / self._vlim))
            if scale > 1.0:
                qdot = qdot / scale
            q = q + qdot * p.integration_step
            t = t + p.integration_step
            rows.append(np.concatenate([[t], q]))

        k = max(1, int(math.ceil((t + p.close_duration - t0) / p.time_step - EPS)))
        t_end = t0 + k * p.time_step
        while t < t_end - EPS:
            h = min(p.integration_step, t_end - t)
            err = self._grasp_error(q, pose, yaw_goal, t)
            qdot = damped_pinv(jacobian(self.arm, q)) @ (feed + p.grasp_gain * err)
            if np.any(np.abs(qdot) > self._vlim * (1.0 + 1e-9)):
                return fail("joint velocity limit")
            q = q + qdot * h
            t = t + h
            rows.append(np.concatenate([[t], q]))

        t = t_end
        if not self._enclosed(self._grasp_error(q, pose, yaw_goal, t)):
            return fail("lost enclosure")
        if not self.on_belt(pose, t):
            return fail("object left the belt")
        trajectory = np.vstack(rows)
        trajectory[-1, 0] = t_end
        if swept_collides(self.arm, self.world, trajectory[:, 1:], trajectory[:, 0], pose, p.replan_cutoff):
            return fail("collision")

        terminal = State(self.snap_q(q), s.t_disc + k)
        prim = Primitive(PrimitiveKind.DYNAMIC_GRASP, k * p.time_step)
        return GraspResult(True, terminal, trajectory, "", prim)

    def is_grasp_success(self, result: GraspResult, goal: GoalPose) -> bool:
        """Replay check: final EE pose within the enclosure tolerances of the advected object."""
        if not result.success or result.terminal is None:
            return False
        pose = self.object_pose(goal)
        t_end = float(result.trajectory[-1, 0])
        q = result.trajectory[-1, 1:]
        ee = forward_kinematics(self.arm, q)
        cx, cy = self.world.object_center(pose, t_end)
        yaw_err = symmetric_angle_diff(ee.orientation, pose[2], self.params.grasp_symmetry)
        return self._enclosed(np.array([cx - ee.position[0], cy - ee.position[1], yaw_err]))

    # ------------------------------------------------------------------ latching

    def latch_feasible(self, s: State, target: State, goal: Optional[GoalPose] = None) -> bool:
        """One δ_t linear move s -> target within joint velocity limits and collision-free."""
        if target.t_disc != s.t_disc + 1:
            return False
        delta = self.index_delta(s.q_disc, target.q_disc)
        dq = np.abs(delta) * self.params.joint_resolution
        if np.any(dq > self._vlim * self.params.time_step + EPS):
            return False
        t_from = self.time_of(s)
        return not self.motion_collides(s.q_disc, delta, t_from, t_from + self.params.time_step, goal)

    def can_latch(self, s: State, path) -> Tuple[bool, Optional[State]]:
        """
        Check a latch from s onto ``path`` (anything with ``states`` and ``goal``).

        Returns:
            (feasible, target state on the path or None)
        """
        target = next((st for st in path.states if st.t_disc == s.t_disc + 1), None)
        if target is None:
            return False, None
        return self.latch_feasible(s, target, path.goal), target

    def latch_primitive(self, target: State) -> Primitive:
        return Primitive(PrimitiveKind.LATCH, self.params.time_step, target_state=target)

    # ------------------------------------------------------------------ replay

    def edge_valid(self, s_from: State, s_to: State, prim: Primitive, goal: GoalPose) -> bool:
        """Re-check one path edge; dynamic grasps are validated from the grasp cache/trajectory by the caller."""
        dt = self.params.time_step
        steps = int(round(prim.duration / dt))
        if s_to.t_disc - s_from.t_disc != steps or steps <= 0:
            return False
        t_from = self.time_of(s_from)
        delta = self.index_delta(s_from.q_disc, s_to.q_disc)
        if prim.kind == PrimitiveKind.WAIT:
            if np.any(delta != 0):
                return False
        elif prim.kind == PrimitiveKind.STATIC_JOINT:
            expected = np.zeros(self.arm.n, dtype=int)
            expected[prim.joint_index] = prim.direction * self.params.step_indices
            if np.any(delta != expected):
                return False
            delta = expected
        elif prim.kind in (PrimitiveKind.LATCH, PrimitiveKind.INTERPOLATED):
            if steps != 1:
                return False
            if np.any(np.abs(delta) * self.params.joint_resolution > self._vlim * dt + EPS):
                return False
        else:
            return False
        return not self.motion_collides(s_from.q_disc, delta, t_from, t_from + steps * dt, goal)
