"""
Offline stage: plan root paths, certify coverage, latch onto home paths, and
recurse backwards along each root path until every reachable goal is covered
from every replannable state.

The recursion is sequential and its output is a pure function of the config
and the SampleGoal seed.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Set, Tuple

import numpy as np

from scripts.planner.lattice import GoalPose, Lattice, State
from scripts.planner.search import BudgetPurpose, Path, Planner, SearchBudget
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class RootPath:
    id: int
    path: Path
    covered_goals: Set[int]
    origin_state: State
    # state key -> goal keys this path was certified for at that state
    certificates: Dict[int, Set[int]] = field(default_factory=dict)

    @property
    def goal(self) -> GoalPose:
        return self.path.goal

    @property
    def states(self) -> List[State]:
        return self.path.states


class LatchEntry(NamedTuple):
    target_key: int
    goals: FrozenSet[int]


@dataclass
class CoverageMap:
    entries: Dict[Tuple[int, int], int] = field(default_factory=dict)
    latch_entries: Dict[Tuple[int, int], LatchEntry] = field(default_factory=dict)
    home_paths: List[int] = field(default_factory=list)
    unreachable: Dict[int, Set[int]] = field(default_factory=dict)

    def lookup(self, state_key: int, goal_key: int) -> Optional[int]:
        return self.entries.get((state_key, goal_key))

    def latch(self, state_key: int, root_id: int) -> Optional[LatchEntry]:
        return self.latch_entries.get((state_key, root_id))

    def is_unreachable(self, state_key: int, goal_key: int) -> bool:
        return goal_key in self.unreachable.get(state_key, ())

    def stored_states(self) -> Set[int]:
        return {sk for sk, _ in self.entries} | set(self.unreachable)


@dataclass
class PreprocessStats:
    root_planner_calls: int = 0
    experience_calls: int = 0
    latch_checks: int = 0
    latch_certificates: int = 0
    preprocess_calls: int = 0
    max_depth: int = 0
    elapsed: float = 0.0


@dataclass
class PreprocessResult:
    coverage: CoverageMap
    root_paths: List[RootPath]
    stats: PreprocessStats
    covered: Set[int]
    unreachable: Set[int]


class Preprocessor:
    """Builds the coverage map from the home state over the full goal region."""

    def __init__(
        self,
        lattice: Lattice,
        planner: Planner,
        home: State,
        replan_cutoff_disc: int,
        root_budget: SearchBudget,
        bounded_budget: SearchBudget,
        seed: int = 0,
        enable_latching: bool = True,
        certify_latches: bool = True,
    ):
        self.lattice = lattice
        self.planner = planner
        self.region = lattice.region
        self.home = home
        self.cutoff_disc = replan_cutoff_disc
        self.root_budget = root_budget
        self.bounded_budget = bounded_budget
        self.enable_latching = enable_latching
        self.certify_latches = certify_latches
        self.rng = np.random.default_rng(seed)

        self.root_paths: List[RootPath] = []
        self.coverage = CoverageMap()
        self.stats = PreprocessStats()

    # ------------------------------------------------------------------ helpers

    def _goal(self, key: int) -> GoalPose:
        return self.region.from_key(key)

    def _sample_goal(self, remaining: Set[int]) -> int:
        ordered = sorted(remaining)
        return ordered[int(self.rng.integers(len(ordered)))]

    def _certify(self, state: State, goal_key: int, root: RootPath) -> bool:
        self.stats.experience_calls += 1
        result = self.planner.plan_with_experience(state, self._goal(goal_key), root.path, self.bounded_budget)
        return result.success

    def _record_entry(self, state: State, goal_key: int, root: RootPath) -> None:
        sk = self.lattice.key(state)
        if (sk, goal_key) in self.coverage.entries:
            return
        self.coverage.entries[(sk, goal_key)] = root.id
        root.certificates.setdefault(sk, set()).add(goal_key)

    def _replannable_after_origin(self, root: RootPath) -> List[State]:
        return [s for s in root.states[1:] if s.t_disc <= self.cutoff_disc]

    # ------------------------------------------------------------------ algorithm

    def plan_root_paths(self, s_start: State, g_uncov: Set[int]) -> Tuple[List[RootPath], Set[int]]:
        """
        Cover ``g_uncov`` from ``s_start`` with as few root paths as the sampling allows.

        Returns:
            (new root paths, goals unreachable from s_start)
        """
        psi: List[RootPath] = []
        unreachable: Set[int] = set()
        remaining = set(g_uncov)
        while remaining:
            gi = self._sample_goal(remaining)
            remaining.discard(gi)
            self.stats.root_planner_calls += 1
            result = self.planner.plan(s_start, self._goal(gi), self.root_budget)
            if not result.success:
                unreachable.add(gi)
                continue

            root = RootPath(len(self.root_paths), result.path, set(), s_start)
            self.root_paths.append(root)
            covered = {gi}
            # goal-key order keeps the sweep deterministic
            for gj in sorted(remaining):
                if self._certify(s_start, gj, root):
                    covered.add(gj)
            remaining -= covered
            root.covered_goals = covered
            for gk in sorted(covered):
                self._record_entry(s_start, gk, root)
            psi.append(root)
            logger.debug(
                "root path planned",
                root_id=root.id,
                origin_t=s_start.t_disc,
                goal=gi,
                covered=len(covered),
                length=len(root.states),
            )

        if unreachable:
            self.coverage.unreachable.setdefault(self.lattice.key(s_start), set()).update(unreachable)
        return psi, unreachable

    def try_latching(
        self, s: State, home_ids: List[int], g_uncov: Set[int], g_cov: Set[int]
    ) -> Tuple[Set[int], Set[int]]:
        """Move goals of latchable home root paths from uncovered to covered."""
        g_uncov, g_cov = set(g_uncov), set(g_cov)
        sk = self.lattice.key(s)
        for hid in home_ids:
            if not g_uncov:
                break
            home = self.root_paths[hid]
            self.stats.latch_checks += 1
            ok, target = self.lattice.can_latch(s, home.path)
            if not ok:
                continue
            goals = home.covered_goals & g_uncov
            if self.certify_latches:
                goals = {g for g in sorted(goals) if self._certify(target, g, home)}
            if not goals:
                continue
            previous = self.coverage.latch_entries.get((sk, hid))
            merged = frozenset(goals) | (previous.goals if previous else frozenset())
            self.coverage.latch_entries[(sk, hid)] = LatchEntry(self.lattice.key(target), merged)
            self.stats.latch_certificates += 1
            g_uncov -= goals
            g_cov |= goals
            logger.debug("latch certified", state_t=s.t_disc, home_id=hid, goals=len(goals))
        return g_uncov, g_cov

    def _self_certify(self, root: RootPath, s_last: State, gi_uncov: Set[int], gi_cov: Set[int]) -> None:
        """Certify the path's own goals at its last replannable state; failures become uncovered."""
        sk = self.lattice.key(s_last)
        for gk in sorted(root.covered_goals):
            if (sk, gk) in self.coverage.entries:
                continue
            if self._certify(s_last, gk, root):
                self._record_entry(s_last, gk, root)
            else:
                gi_cov.discard(gk)
                gi_uncov.add(gk)

    def preprocess(self, s_start: State, g_uncov: Set[int], g_cov: Set[int], depth: int = 0) -> Tuple[Set[int], Set[int]]:
        """
        Cover ``g_uncov`` from ``s_start`` and, backwards along each new root
        path, from every later replannable state.

        Returns:
            (goals unreachable from s_start, covered goals including g_cov)
        """
        self.stats.preprocess_calls += 1
        self.stats.max_depth = max(self.stats.max_depth, depth)
        sk = self.lattice.key(s_start)

        already = {g for g in g_uncov if (sk, g) in self.coverage.entries}
        known_unreachable = set(g_uncov) & self.coverage.unreachable.get(sk, set())
        todo = set(g_uncov) - already - known_unreachable

        psi, unreachable = self.plan_root_paths(s_start, todo)
        unreachable |= known_unreachable
        if s_start == self.home and not self.coverage.home_paths:
            self.coverage.home_paths = [root.id for root in psi]
        cov_start = set(g_cov) | (set(g_uncov) - unreachable)

        if s_start.t_disc <= self.cutoff_disc:
            for root in psi:
                gi_cov = set(root.covered_goals)
                gi_uncov = cov_start - gi_cov
                states = self._replannable_after_origin(root)
                if not states:
                    continue
                self._self_certify(root, states[-1], gi_uncov, gi_cov)
                for s in reversed(states):
                    if self.enable_latching and self.coverage.home_paths:
                        gi_uncov, gi_cov = self.try_latching(s, self.coverage.home_paths, gi_uncov, gi_cov)
                        if not gi_uncov:
                            break
                    gi_uncov, gi_cov = self.preprocess(s, gi_uncov, gi_cov, depth + 1)
                    if not gi_uncov:
                        break
        return unreachable, cov_start

    def run(self) -> PreprocessResult:
        start = time.perf_counter()
        full = {self.region.key(g) for g in self.region.goals()}
        unreachable, covered = self.preprocess(self.home, full, set())
        self.stats.elapsed = time.perf_counter() - start
        logger.info(
            "✅ Preprocessing complete",
            root_paths=len(self.root_paths),
            goals=len(full),
            covered=len(covered),
            unreachable=len(unreachable),
            entries=len(self.coverage.entries),
            latch_entries=len(self.coverage.latch_entries),
            elapsed=round(self.stats.elapsed, 3),
        )
        return PreprocessResult(self.coverage, self.root_paths, self.stats, covered, unreachable)


def calibrate_expansion_cost(planner: Planner, home: State, goals: List[GoalPose], budget: SearchBudget, samples: int = 5) -> Optional[float]:
    """Wall seconds per expansion measured on a few plans from home."""
    expansions = 0
    elapsed = 0.0
    for goal in goals[:samples]:
        t0 = time.perf_counter()
        result = planner.plan(home, goal, budget)
        elapsed += time.perf_counter() - t0
        expansions += result.expansions
    if expansions == 0:
        return None
    return elapsed / expansions


def bounded_budget_for(time_bound: float, safety_factor: float, seconds_per_expansion: float) -> SearchBudget:
    """max_expansions = floor(rho * T_bound / cost per expansion), at least one."""
    count = max(1, int(math.floor(safety_factor * time_bound / seconds_per_expansion)))
    return SearchBudget(count, BudgetPurpose.BOUNDED)
