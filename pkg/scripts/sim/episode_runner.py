"""
Sense-plan-act episodes on the simulated conveyor.

An episode samples a true object pose from the goal region, streams noisy
estimates until the replan cutoff, lets a strategy turn them into a path, and
judges the final path against the true object motion.
"""

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from scripts.planner.errors import CoverageIntegrityError
from scripts.planner.factory import PlanningStack
from scripts.planner.kinematics import ObjectPose, forward_kinematics, symmetric_angle_diff
from scripts.planner.lattice import EPS, GoalPose, Primitive, PrimitiveKind, State
from scripts.planner.preprocessor import CoverageMap, RootPath
from scripts.planner.query_engine import ExecutionState, QueryEngine, QueryOutcome, merge_paths
from scripts.planner.search import Path, SearchBudget
from scripts.sim.perception import PerceptionModel, back_project
from utils.logger import get_logger

logger = get_logger(__name__)


class Strategy(str, Enum):
    REPLAN_ALWAYS = "e1"
    FIRST_POSE = "e2"
    BEST_POSE = "e3"


class Outcome(str, Enum):
    PICKUP_SUCCESS = "pickup-success"
    MISS = "miss"
    PLANNER_FAILURE = "planner-failure"


@dataclass
class ReplanEvent:
    time: float
    goal: int
    success: bool
    outcome: str
    expansions: int
    modeled_time: float
    wall_time: float
    map_lookups: int = 0
    planner_calls: int = 0
    latch_checks: int = 0
    after_mark: bool = False


@dataclass
class Episode:
    seed: int
    method: str
    budget_s: float
    true_goal: int
    true_pose: ObjectPose
    estimates: List[dict] = field(default_factory=list)
    events: List[ReplanEvent] = field(default_factory=list)
    outcome: Outcome = Outcome.PLANNER_FAILURE
    final_goal: Optional[int] = None
    path_cost: Optional[float] = None
    replanned_after_mark: bool = False

    @property
    def planning_cycles(self) -> int:
        """Planning attempts that ran a planner (unchanged-goal confirmations excluded)."""
        return sum(1 for e in self.events if e.outcome != QueryOutcome.UNCHANGED.value)

    @property
    def planning_successes(self) -> int:
        return sum(1 for e in self.events if e.success and e.outcome != QueryOutcome.UNCHANGED.value)

    @property
    def accurate_perception(self) -> bool:
        return self.final_goal is not None and self.final_goal == self.true_goal

    def to_record(self) -> dict:
        return {
            "seed": self.seed,
            "method": self.method,
            "budget_s": self.budget_s,
            "true_goal": self.true_goal,
            "true_pose": [round(v, 6) for v in self.true_pose],
            "estimates": self.estimates,
            "events": [asdict(e) for e in self.events],
            "outcome": self.outcome.value,
            "final_goal": self.final_goal,
            "path_cost": self.path_cost,
            "planning_cycles": self.planning_cycles,
            "planning_successes": self.planning_successes,
            "accurate_perception": self.accurate_perception,
            "replanned_after_mark": self.replanned_after_mark,
        }


class ConveyorSimulator:
    """Ground truth, perception stream and judging shared by every planning method."""

    def __init__(self, stack: PlanningStack, perception: PerceptionModel):
        self.stack = stack
        self.lattice = stack.lattice
        self.region = stack.region
        self.perception = perception
        pc = stack.config.perception
        self.pickup_tolerance = pc.pickup_tolerance
        self.pickup_yaw_tolerance = math.radians(pc.pickup_yaw_tolerance_deg)

    def sample_truth(self, rng: np.random.Generator) -> Tuple[GoalPose, ObjectPose]:
        goal = self.region.from_key(int(rng.integers(self.region.size)))
        return goal, self.region.pose_of(goal)

    def update_times(self) -> List[float]:
        """Perception update instants; nothing is delivered after the replan cutoff."""
        cutoff = self.lattice.params.replan_cutoff
        period = self.perception.update_period
        count = int(math.floor(cutoff / period + EPS)) + 1
        return [k * period for k in range(count)]

    def observe(self, true_pose: ObjectPose, t: float, rng: np.random.Generator):
        speed = self.stack.world.conveyor_speed
        now = (true_pose[0] + speed * t, true_pose[1], true_pose[2])
        estimate = self.perception.estimate(now, t, rng)
        goal, clamped = back_project(estimate.pose, t, speed, self.region)
        record = {
            "t": round(t, 6),
            "x": round(estimate.pose[0], 6),
            "y": round(estimate.pose[1], 6),
            "yaw": round(estimate.pose[2], 6),
            "distance": round(estimate.distance, 6),
            "goal": self.region.key(goal),
            "clamped": clamped,
            "accurate": self.perception.is_accurate(estimate),
        }
        return estimate, goal, record

    def idle_path(self, goal: GoalPose, t_disc: int) -> Path:
        """The robot holding its home configuration from t = 0 up to t_disc."""
        home = self.stack.home
        states = [State(home.q_disc, i) for i in range(t_disc + 1)]
        wait = Primitive(PrimitiveKind.WAIT, self.lattice.params.time_step)
        return Path(states, [wait] * t_disc, goal)

    def start_after(self, t: float, delay: float) -> int:
        """First grid index at least ``delay`` seconds after t."""
        return int(math.ceil((t + delay) / self.lattice.params.time_step - EPS))

    def plan_delayed(self, start_t_disc: int, goal: GoalPose, budget: SearchBudget):
        """Scratch plan from home at a later grid time, prefixed by the idle segment."""
        start = State(self.stack.home.q_disc, start_t_disc)
        result = self.stack.planner.plan(start, goal, budget)
        if not result.success:
            return None, result
        if start_t_disc == 0:
            return result.path, result
        return merge_paths(self.idle_path(goal, start_t_disc), result.path, start), result

    def judge(self, path: Optional[Path], true_goal: GoalPose) -> Outcome:
        """Replay the final path against the true object and check the closing pose."""
        if path is None or not path.terminal_grasp or path.grasp_trajectory is None:
            return Outcome.PLANNER_FAILURE
        replay = Path(path.states, path.primitives, true_goal, True, path.grasp_trajectory)
        if not replay.validate(self.lattice):
            return Outcome.MISS
        traj = path.grasp_trajectory
        t_end = float(traj[-1, 0])
        true_pose = self.region.pose_of(true_goal)
        if not self.lattice.on_belt(true_pose, t_end):
            return Outcome.MISS
        ee = forward_kinematics(self.stack.arm, traj[-1, 1:])
        cx, cy = self.stack.world.object_center(true_pose, t_end)
        position_error = math.hypot(cx - ee.position[0], cy - ee.position[1])
        yaw_error = abs(symmetric_angle_diff(ee.orientation, true_pose[2], self.lattice.params.grasp_symmetry))
        if position_error <= self.pickup_tolerance and yaw_error <= self.pickup_yaw_tolerance:
            return Outcome.PICKUP_SUCCESS
        return Outcome.MISS

    def finish(self, episode: Episode, path: Optional[Path], true_goal: GoalPose) -> Episode:
        episode.outcome = self.judge(path, true_goal)
        if path is not None:
            episode.final_goal = self.region.key(path.goal)
            episode.path_cost = path.duration(self.lattice.params.time_step)
        episode.replanned_after_mark = any(e.after_mark and e.success for e in episode.events)
        return episode


class EpisodeRunner(ConveyorSimulator):
    """Runs the preprocessed planner under one of the three replanning strategies."""

    def __init__(
        self,
        stack: PlanningStack,
        perception: PerceptionModel,
        coverage: CoverageMap,
        root_paths: List[RootPath],
    ):
        super().__init__(stack, perception)
        self.engine: QueryEngine = stack.query_engine(coverage, root_paths)

    def _event(self, t: float, goal: GoalPose, path: Optional[Path], stats, after_mark: bool) -> ReplanEvent:
        return ReplanEvent(
            time=t,
            goal=self.region.key(goal),
            success=path is not None,
            outcome=stats.outcome.value,
            expansions=stats.plan_expansions,
            modeled_time=self.stack.modeled_time(stats.plan_expansions),
            wall_time=stats.wall_time,
            map_lookups=stats.map_lookups,
            planner_calls=stats.planner_calls,
            latch_checks=stats.latch_checks,
            after_mark=after_mark,
        )

    def _failed_event(self, t: float, goal: GoalPose, after_mark: bool) -> ReplanEvent:
        return ReplanEvent(
            time=t,
            goal=self.region.key(goal),
            success=False,
            outcome=QueryOutcome.FAILURE_UNREACHABLE.value,
            expansions=0,
            modeled_time=0.0,
            wall_time=0.0,
            after_mark=after_mark,
        )

    def run_episode(self, strategy: Strategy, seed: int) -> Episode:
        """
        Simulate one pickup.

        The estimate stream is drawn in full for every strategy, so the same
        seed presents the same observations to E1, E2 and E3.
        """
        strategy = Strategy(strategy)
        rng = np.random.default_rng(seed)
        true_goal, true_pose = self.sample_truth(rng)
        episode = Episode(
            seed=seed,
            method=f"ours-{strategy.value}",
            budget_s=self.engine.time_bound,
            true_goal=self.region.key(true_goal),
            true_pose=true_pose,
        )
        times = self.update_times()
        path: Optional[Path] = None
        planned_once = False

        for k, t in enumerate(times):
            _, goal, record = self.observe(true_pose, t, rng)
            episode.estimates.append(record)
            accurate = record["accurate"]

            if strategy == Strategy.BEST_POSE:
                if planned_once or not (accurate or k == len(times) - 1):
                    continue
                planned_once = True
                start_t = self.start_after(t, self.engine.time_bound)
                new_path, result = self.plan_delayed(start_t, goal, self.stack.bounded_budget)
                path = new_path
                episode.events.append(
                    ReplanEvent(
                        time=t,
                        goal=self.region.key(goal),
                        success=new_path is not None,
                        outcome=(QueryOutcome.REPLANNED if new_path else QueryOutcome.FAILURE_UNREACHABLE).value,
                        expansions=result.expansions,
                        modeled_time=self.stack.modeled_time(result.expansions),
                        wall_time=0.0,
                        planner_calls=1,
                        after_mark=accurate,
                    )
                )
                continue

            if k == 0:
                planned_once = True
                try:
                    path, stats = self.engine.plan_from_home(goal)
                except CoverageIntegrityError as e:
                    logger.error("❌ Coverage integrity failure", seed=seed, error=str(e))
                    episode.events.append(self._failed_event(t, goal, accurate))
                    continue
                episode.events.append(self._event(t, goal, path, stats, accurate))
                continue

            if strategy == Strategy.FIRST_POSE or path is None:
                continue

            execution = ExecutionState.at(path, t, self.lattice.params.time_step)
            s_start = self.engine.start_for(execution)
            if s_start is None:
                continue
            try:
                new_path, stats = self.engine.query(goal, path, s_start)
            except CoverageIntegrityError as e:
                logger.error("❌ Coverage integrity failure", seed=seed, error=str(e))
                episode.events.append(self._failed_event(t, goal, accurate))
                continue
            episode.events.append(self._event(t, goal, new_path, stats, accurate))
            if new_path is not None:
                path = new_path

        self.finish(episode, path, true_goal)
        logger.debug(
            "episode",
            seed=seed,
            method=episode.method,
            outcome=episode.outcome.value,
            cycles=episode.planning_cycles,
        )
        return episode
