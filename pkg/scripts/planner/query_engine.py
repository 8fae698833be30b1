"""
Online stage: constant-time replanning against a preprocessed coverage map.
"""

import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from scripts.planner.errors import ContractViolation, CoverageIntegrityError
from scripts.planner.lattice import EPS, GoalPose, Lattice, State
from scripts.planner.preprocessor import CoverageMap, RootPath
from scripts.planner.search import Path, Planner, SearchBudget
from utils.logger import get_logger

logger = get_logger(__name__)


class QueryOutcome(str, Enum):
    REPLANNED = "replanned"
    LATCHED = "latched"
    UNCHANGED = "unchanged"
    FAILURE_UNREACHABLE = "failure-unreachable"


@dataclass
class QueryStats:
    map_lookups: int = 0
    latch_checks: int = 0
    planner_calls: int = 0
    plan_expansions: int = 0
    wall_time: float = 0.0
    outcome: QueryOutcome = QueryOutcome.FAILURE_UNREACHABLE
    scanned: List[int] = field(default_factory=list)
    transition_t: Optional[int] = None
    coverage_gap: bool = False

    def to_record(self) -> dict:
        record = asdict(self)
        record["outcome"] = self.outcome.value
        return record


@dataclass(frozen=True)
class ExecutionState:
    """The robot's position along the path it is executing."""

    path: Path
    index: int
    elapsed: float

    @classmethod
    def at(cls, path: Path, elapsed: float, time_step: float) -> "ExecutionState":
        """Last path state reached after ``elapsed`` seconds of execution."""
        reached = [i for i, s in enumerate(path.states) if s.t_disc * time_step <= elapsed + EPS]
        if not reached:
            raise ContractViolation(f"path starts after t={elapsed}")
        return cls(path, reached[-1], elapsed)

    @property
    def current_state(self) -> State:
        return self.path.states[self.index]


class QueryEngine:
    """Read-only view over a loaded artifact; safe to share between queries."""

    def __init__(
        self,
        lattice: Lattice,
        planner: Planner,
        coverage: CoverageMap,
        root_paths: List[RootPath],
        home: State,
        bounded_budget: SearchBudget,
        replan_cutoff_disc: int,
        time_bound: float,
    ):
        self.lattice = lattice
        self.planner = planner
        self.coverage = coverage
        self.roots: Dict[int, RootPath] = {r.id: r for r in root_paths}
        self.home = home
        self.bounded_budget = bounded_budget
        self.cutoff_disc = replan_cutoff_disc
        self.time_bound = time_bound

    # ------------------------------------------------------------------ queries

    def select_start(self, path: Path, current_time: float) -> Optional[State]:
        """First grid state on the path more than T_bound of execution time ahead, if still replannable."""
        for s in path.states:
            if self.lattice.time_of(s) - current_time > self.time_bound + EPS:
                return s if s.t_disc <= self.cutoff_disc else None
        return None

    def start_for(self, execution: ExecutionState) -> Optional[State]:
        return self.select_start(execution.path, execution.elapsed)

    def plan_from_home(self, g: GoalPose) -> Tuple[Optional[Path], QueryStats]:
        """Initial plan at t = 0 through the home entry of the map."""
        t0 = time.perf_counter()
        stats = QueryStats()
        lat = self.lattice
        home_key = lat.key(self.home)
        stats.map_lookups += 1
        stats.scanned.append(self.home.t_disc)
        rid = self.coverage.lookup(home_key, lat.region.key(g))
        path = None
        if rid is not None:
            result = self.planner.plan_with_experience(self.home, g, self.roots[rid].path, self.bounded_budget)
            stats.planner_calls += 1
            stats.plan_expansions += result.expansions
            if not result.success:
                raise CoverageIntegrityError(f"certified home entry for goal {g} failed to plan")
            path = result.path
            stats.outcome = QueryOutcome.REPLANNED
            stats.transition_t = self.home.t_disc
        stats.wall_time = time.perf_counter() - t0
        logger.debug("query", kind="home", goal=lat.region.key(g), **stats.to_record())
        return path, stats

    def query(self, g: GoalPose, path_curr: Path, s_start: State) -> Tuple[Optional[Path], QueryStats]:
        """
        Replan toward g from the current path.

        Scans from the last replannable state of ``path_curr`` back to
        ``s_start``. A direct coverage entry wins over a latch at the same state.

        Returns:
            (merged path or None when g is unreachable, stats)
        """
        t0 = time.perf_counter()
        stats = QueryStats()
        lat = self.lattice
        goal_key = lat.region.key(g)

        start_idx = path_curr.index_of(s_start)
        if start_idx is None or s_start.t_disc > self.cutoff_disc:
            raise ContractViolation(f"s_start {s_start} must be a replannable state on the current path")

        if g == path_curr.goal and path_curr.terminal_grasp:
            stats.outcome = QueryOutcome.UNCHANGED
            stats.wall_time = time.perf_counter() - t0
            logger.debug("query", goal=goal_key, **stats.to_record())
            return path_curr, stats

        last_idx = max(i for i, s in enumerate(path_curr.states) if s.t_disc <= self.cutoff_disc)
        home_key = lat.key(self.home)
        # M(s_home, g) is read at most once per query, shared with the scan at the home state
        home_lookup: List[Optional[int]] = []

        def lookup_home() -> Optional[int]:
            if not home_lookup:
                stats.map_lookups += 1
                home_lookup.append(self.coverage.lookup(home_key, goal_key))
            return home_lookup[0]

        recorded_unreachable = 0
        merged: Optional[Path] = None
        for idx in range(last_idx, start_idx - 1, -1):
            s = path_curr.states[idx]
            sk = lat.key(s)
            stats.scanned.append(s.t_disc)
            if sk == home_key:
                rid = lookup_home()
            else:
                stats.map_lookups += 1
                rid = self.coverage.lookup(sk, goal_key)
            if rid is not None:
                result = self.planner.plan_with_experience(s, g, self.roots[rid].path, self.bounded_budget)
                stats.planner_calls += 1
                stats.plan_expansions += result.expansions
                if not result.success:
                    raise CoverageIntegrityError(
                        f"coverage entry (state={sk}, goal={goal_key}) -> root {rid} failed within the bounded budget"
                    )
                merged = self.merge_paths(path_curr, result.path, s)
                stats.outcome = QueryOutcome.REPLANNED
                stats.transition_t = s.t_disc
                break

            hid = lookup_home() if self.coverage.home_paths else None
            if hid is not None:
                home_root = self.roots[hid]
                entry = self.coverage.latch(sk, hid)
                if entry is not None and goal_key in entry.goals:
                    stats.latch_checks += 1
                    ok, target = lat.can_latch(s, home_root.path)
                    if ok:
                        result = self.planner.plan_with_experience(target, g, home_root.path, self.bounded_budget)
                        stats.planner_calls += 1
                        stats.plan_expansions += result.expansions
                        if result.success:
                            merged = self.merge_paths_by_latching(path_curr, result.path, s)
                            stats.outcome = QueryOutcome.LATCHED
                            stats.transition_t = s.t_disc
                            break
                        raise CoverageIntegrityError(
                            f"certified latch (state={sk}, root={home_root.id}) failed for goal {goal_key}"
                        )

            if self.coverage.is_unreachable(sk, goal_key):
                recorded_unreachable += 1

        if merged is None:
            stats.coverage_gap = recorded_unreachable == 0
            if stats.coverage_gap:
                logger.warning("⚠️ No coverage and no unreachable record", goal=goal_key, s_start_t=s_start.t_disc)
        stats.wall_time = time.perf_counter() - t0
        logger.debug("query", goal=goal_key, **stats.to_record())
        return merged, stats

    # ------------------------------------------------------------------ merging

    def merge_paths(self, path_curr: Path, path_next: Path, s: State) -> Path:
        return merge_paths(path_curr, path_next, s)

    def merge_paths_by_latching(self, path_curr: Path, path_home: Path, s: State) -> Path:
        """Prefix of path_curr up to s, a δ_t latch to path_home's first state, then path_home."""
        idx = path_curr.index_of(s)
        if idx is None:
            raise ContractViolation(f"latch state {s} is not on the current path")
        target = path_home.states[0]
        if not self.lattice.latch_feasible(s, target, path_home.goal):
            raise ContractViolation(f"latch {s} -> {target} violates joint limits or collides")
        return Path(
            list(path_curr.states[: idx + 1]) + list(path_home.states),
            list(path_curr.primitives[:idx]) + [self.lattice.latch_primitive(target)] + list(path_home.primitives),
            path_home.goal,
            path_home.terminal_grasp,
            path_home.grasp_trajectory,
        )


def merge_paths(path_curr: Path, path_next: Path, s: State) -> Path:
    """Prefix of path_curr up to s followed by path_next (which starts at s)."""
    idx = path_curr.index_of(s)
    if idx is None or path_next.states[0] != s:
        raise ContractViolation(f"transition state {s} is not on both paths")
    return Path(
        list(path_curr.states[:idx]) + list(path_next.states),
        list(path_curr.primitives[:idx]) + list(path_next.primitives),
        path_next.goal,
        path_next.terminal_grasp,
        path_next.grasp_trajectory,
    )
