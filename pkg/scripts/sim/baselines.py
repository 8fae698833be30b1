"""
Comparison planners without preprocessing: weighted A* from scratch and a
goal-biased kinodynamic RRT in (q, t), both run under the same perception
stream and time budget as the preprocessed planner.
"""

import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from scripts.planner.errors import ContractViolation
from scripts.planner.factory import PlanningStack
from scripts.planner.kinematics import EEPose, inverse_kinematics, normalize_angle
from scripts.planner.lattice import EPS, GoalPose, Lattice, Primitive, PrimitiveKind, State
from scripts.planner.query_engine import QueryOutcome, merge_paths
from scripts.planner.search import Path, SearchResult
from scripts.sim.episode_runner import ConveyorSimulator, Episode, ReplanEvent
from scripts.sim.perception import PerceptionModel
from utils.config_loader import RRTConfig
from utils.logger import get_logger

logger = get_logger(__name__)


class BaselineKind(str, Enum):
    WASTAR = "wastar"
    RRT = "rrt"


class RRTPlanner:
    """
    Forward tree over (q, t). Every extension is one δ_t interpolated move
    within the joint velocity limits; a zero move is a wait. Goal samples are
    IK pre-grasp configurations along the object's belt trajectory.
    """

    TIME_WEIGHT = 0.2

    def __init__(self, lattice: Lattice, goal_bias: float, pregrasp_samples: int):
        self.lattice = lattice
        self.goal_bias = goal_bias
        self.pregrasp_samples = pregrasp_samples
        p = lattice.params
        self._max_step = np.array(
            [max(0, int(math.floor(v * p.time_step / p.joint_resolution + EPS))) for v in lattice.arm.joint_velocity_limits]
        )

    def pregrasp_states(self, start: State, g: GoalPose) -> List[State]:
        """Collision-free IK solutions placing the gripper on the advected object at sampled times."""
        lat = self.lattice
        p = lat.params
        t_lo = lat.time_of(start) + p.time_step
        t_hi = min(p.horizon, lat.exit_time(g)) - p.close_duration
        if t_hi < t_lo:
            return []
        pose = lat.object_pose(g)
        targets: List[State] = []
        seen = set()
        for t in np.linspace(t_lo, t_hi, self.pregrasp_samples):
            t_disc = int(round(t / p.time_step))
            cx, cy = lat.world.object_center(pose, t_disc * p.time_step)
            for k in range(p.grasp_symmetry):
                yaw = normalize_angle(pose[2] + 2.0 * math.pi * k / p.grasp_symmetry)
                for elbow in (1, -1):
                    q = inverse_kinematics(lat.arm, EEPose((cx, cy), yaw), elbow=elbow)
                    if q is None:
                        continue
                    state = lat.make_state(q, t_disc)
                    if state in seen or lat.state_collides(state):
                        continue
                    seen.add(state)
                    targets.append(state)
        return targets

    def _sample(self, start: State, targets: List[State], rng: np.random.Generator) -> State:
        lat = self.lattice
        if targets and rng.random() < self.goal_bias:
            return targets[int(rng.integers(len(targets)))]
        q = tuple(int(v) for v in rng.integers(0, lat.levels, size=lat.arm.n))
        t_disc = int(rng.integers(start.t_disc + 1, lat.params.horizon_disc + 1))
        return State(q, t_disc)

    def _nearest(self, nodes: List[State], q_arr: np.ndarray, t_arr: np.ndarray, target: State) -> Optional[int]:
        lat = self.lattice
        earlier = t_arr < target.t_disc
        if not np.any(earlier):
            return None
        half = lat.levels // 2
        dq = (np.asarray(target.q_disc)[None, :] - q_arr + half) % lat.levels - half
        dist = np.abs(dq).sum(axis=1) * lat.params.joint_resolution
        dist = dist + self.TIME_WEIGHT * (target.t_disc - t_arr) * lat.params.time_step
        dist[~earlier] = np.inf
        return int(np.argmin(dist))

    def plan(self, start: State, g: GoalPose, max_iterations: int, rng: np.random.Generator) -> SearchResult:
        lat = self.lattice
        if lat.trigger_dynamic(start, g):
            grasp = lat.dynamic_grasp(start, g)
            if grasp.success:
                return SearchResult(True, self._path({}, start, grasp, g), 0)

        targets = self.pregrasp_states(start, g)
        nodes: List[State] = [start]
        parents: Dict[State, State] = {}
        index = {start}
        q_rows = [np.asarray(start.q_disc)]
        t_rows = [start.t_disc]

        for iteration in range(1, max_iterations + 1):
            target = self._sample(start, targets, rng)
            near_idx = self._nearest(nodes, np.vstack(q_rows), np.asarray(t_rows), target)
            if near_idx is None:
                continue
            near = nodes[near_idx]
            if near.t_disc + 1 > lat.params.horizon_disc:
                continue
            delta = np.clip(lat.index_delta(near.q_disc, target.q_disc), -self._max_step, self._max_step)
            new = State(tuple(int(v) for v in (np.asarray(near.q_disc) + delta) % lat.levels), near.t_disc + 1)
            if new in index or not lat.latch_feasible(near, new, g):
                continue
            nodes.append(new)
            index.add(new)
            parents[new] = near
            q_rows.append(np.asarray(new.q_disc))
            t_rows.append(new.t_disc)

            if lat.trigger_dynamic(new, g):
                grasp = lat.dynamic_grasp(new, g)
                if grasp.success:
                    return SearchResult(True, self._path(parents, new, grasp, g), iteration, "", len(nodes))
        return SearchResult(False, None, max_iterations, "iterations exhausted", len(nodes))

    def _path(self, parents: Dict[State, State], leaf: State, grasp, g: GoalPose) -> Path:
        lat = self.lattice
        chain = [leaf]
        while chain[-1] in parents:
            chain.append(parents[chain[-1]])
        chain.reverse()
        prims: List[Primitive] = []
        for a, b in zip(chain, chain[1:]):
            moved = np.any(lat.index_delta(a.q_disc, b.q_disc) != 0)
            kind = PrimitiveKind.INTERPOLATED if moved else PrimitiveKind.WAIT
            prims.append(Primitive(kind, lat.params.time_step))
        prims.append(grasp.primitive)
        return Path(chain + [grasp.terminal], prims, g, True, grasp.trajectory)


class BaselineRunner(ConveyorSimulator):
    """
    Busy model: a planning cycle occupies the whole time budget and updates
    arriving meanwhile are dropped. A failed cycle keeps the current path.
    """

    def __init__(self, stack: PlanningStack, perception: PerceptionModel, rrt_config: Optional[RRTConfig] = None):
        super().__init__(stack, perception)
        cfg = rrt_config or stack.config.benchmark.rrt
        self.rrt = RRTPlanner(stack.lattice, cfg.goal_bias, cfg.pregrasp_samples)
        self.seconds_per_iteration = cfg.seconds_per_iteration

    def rrt_iterations(self, time_budget: float) -> int:
        rho = self.stack.config.search.safety_factor
        return max(1, int(math.floor(rho * time_budget / self.seconds_per_iteration)))

    def _start_on(self, path: Path, earliest: float) -> Optional[State]:
        for s in path.states:
            if self.lattice.time_of(s) >= earliest - EPS:
                return s if s.t_disc <= self.stack.cutoff_disc else None
        return None

    def _plan(
        self, kind: BaselineKind, start: State, goal: GoalPose, time_budget: float, rng: np.random.Generator
    ) -> Tuple[SearchResult, float]:
        if kind == BaselineKind.WASTAR:
            result = self.stack.planner.plan(start, goal, self.stack.budget_for(time_budget))
            return result, self.stack.modeled_time(result.expansions)
        result = self.rrt.plan(start, goal, self.rrt_iterations(time_budget), rng)
        return result, result.expansions * self.seconds_per_iteration

    def run_baseline(self, kind: BaselineKind, seed: int, time_budget: float) -> Episode:
        kind = BaselineKind(kind)
        if time_budget <= 0:
            raise ContractViolation("time_budget must be > 0")
        rng = np.random.default_rng(seed)
        # planner randomness stays off the perception stream
        planner_rng = np.random.default_rng([seed, 1])
        true_goal, true_pose = self.sample_truth(rng)
        episode = Episode(
            seed=seed,
            method=kind.value,
            budget_s=time_budget,
            true_goal=self.region.key(true_goal),
            true_pose=true_pose,
        )
        path: Optional[Path] = None
        busy_until = -math.inf

        for k, t in enumerate(self.update_times()):
            _, goal, record = self.observe(true_pose, t, rng)
            episode.estimates.append(record)
            if t < busy_until - EPS:
                record["dropped"] = True
                continue
            if path is not None and goal == path.goal:
                continue

            if path is None:
                start_t = 0 if k == 0 else self.start_after(t, time_budget)
                if start_t > self.stack.cutoff_disc:
                    continue
                start = State(self.stack.home.q_disc, start_t)
            else:
                start = self._start_on(path, t + time_budget)
                if start is None:
                    continue

            result, modeled = self._plan(kind, start, goal, time_budget, planner_rng)
            busy_until = t + time_budget
            episode.events.append(
                ReplanEvent(
                    time=t,
                    goal=self.region.key(goal),
                    success=result.success,
                    outcome=(QueryOutcome.REPLANNED if result.success else QueryOutcome.FAILURE_UNREACHABLE).value,
                    expansions=result.expansions,
                    modeled_time=modeled,
                    wall_time=0.0,
                    planner_calls=1,
                    after_mark=record["accurate"],
                )
            )
            if not result.success:
                continue
            if path is not None:
                path = merge_paths(path, result.path, start)
            elif start.t_disc == 0:
                path = result.path
            else:
                path = merge_paths(self.idle_path(goal, start.t_disc), result.path, start)

        self.finish(episode, path, true_goal)
        logger.debug(
            "baseline episode",
            seed=seed,
            method=episode.method,
            budget_s=time_budget,
            outcome=episode.outcome.value,
            cycles=episode.planning_cycles,
        )
        return episode
