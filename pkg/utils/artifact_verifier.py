"""
Integrity suite for a loaded artifact.

Checks, in order: re-certification of sampled coverage and latch entries,
certificate/map cross-check, completeness against an unbounded oracle on
small instances, constant-time accounting over random queries, and the
reachability/coverage monotonicity audits along stored root paths.
"""

import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from scripts.planner.errors import CoverageIntegrityError
from scripts.planner.factory import PlanningStack
from scripts.planner.lattice import GoalPose, State
from scripts.planner.preprocessor import CoverageMap, RootPath
from scripts.planner.query_engine import QueryEngine
from utils.logger import get_logger

logger = get_logger(__name__)

MAX_LISTED = 20


@dataclass
class Violation:
    check: str
    detail: str
    state: Optional[int] = None
    goal: Optional[int] = None


@dataclass
class VerificationReport:
    entries: int = 0
    latch_entries: int = 0
    root_paths: int = 0
    recertified: int = 0
    oracle_pairs: int = 0
    oracle_reachable: int = 0
    queries: int = 0
    max_lookups: int = 0
    max_planner_calls: int = 0
    max_expansions: int = 0
    bounded_budget: int = 0
    lookup_bound: int = 0
    wall_time_max: float = 0.0
    wall_time_p50: float = 0.0
    wall_time_p99: float = 0.0
    time_bound: float = 0.0
    oracle_skipped: bool = False
    violations: List[Violation] = field(default_factory=list)
    audit_violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def counts(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for v in self.violations + self.audit_violations:
            out[v.check] = out.get(v.check, 0) + 1
        return out

    def to_dict(self) -> dict:
        record = asdict(self)
        record["ok"] = self.ok
        record["violation_counts"] = self.counts()
        record["violations"] = record["violations"][:MAX_LISTED]
        record["audit_violations"] = record["audit_violations"][:MAX_LISTED]
        return record


class ArtifactVerifier:
    def __init__(self, stack: PlanningStack, coverage: CoverageMap, root_paths: List[RootPath], seed: int = 0):
        self.stack = stack
        self.lattice = stack.lattice
        self.region = stack.region
        self.planner = stack.planner
        self.coverage = coverage
        self.roots: Dict[int, RootPath] = {r.id: r for r in root_paths}
        self.engine: QueryEngine = stack.query_engine(coverage, root_paths)
        self.rng = np.random.default_rng(seed)
        self.report = VerificationReport(
            entries=len(coverage.entries),
            latch_entries=len(coverage.latch_entries),
            root_paths=len(root_paths),
            bounded_budget=stack.bounded_budget.max_expansions,
            lookup_bound=stack.cutoff_disc + 1,
            time_bound=stack.config.preprocess.time_bound,
        )
        self._oracle: Dict[Tuple[State, int], bool] = {}

    def _violation(self, check: str, detail: str, state: Optional[int] = None, goal: Optional[int] = None):
        v = Violation(check, detail, state, goal)
        self.report.violations.append(v)
        logger.error("❌ Verification failure", check=check, state=state, goal=goal, detail=detail)

    def _audit(self, check: str, detail: str, state: Optional[int] = None, goal: Optional[int] = None):
        self.report.audit_violations.append(Violation(check, detail, state, goal))
        logger.warning("⚠️ Assumption audit violation", check=check, state=state, goal=goal, detail=detail)

    def _replannable(self, root: RootPath) -> List[State]:
        return [s for s in root.states if s.t_disc <= self.stack.cutoff_disc]

    def _oracle_reachable(self, s: State, goal_key: int) -> bool:
        cache_key = (s, goal_key)
        hit = self._oracle.get(cache_key)
        if hit is None:
            result = self.planner.plan(s, self.region.from_key(goal_key), self.stack.root_budget)
            hit = result.success
            self._oracle[cache_key] = hit
        return hit

    # ------------------------------------------------------------------ checks

    def recertify(self, samples: int) -> None:
        """Re-run the bounded experience planner on sampled map and latch entries."""
        entries = sorted(self.coverage.entries.items())
        if entries:
            picks = self.rng.choice(len(entries), size=min(samples, len(entries)), replace=False)
            for i in sorted(int(p) for p in picks):
                (sk, gk), rid = entries[i]
                state = self.lattice.codec.decode(sk)
                root = self.roots[rid]
                if root.path.index_of(state) is None:
                    self._violation("entry", f"state is not on root path {rid}", sk, gk)
                    continue
                result = self.planner.plan_with_experience(
                    state, self.region.from_key(gk), root.path, self.stack.bounded_budget
                )
                self.report.recertified += 1
                if not result.success:
                    self._violation("entry", f"bounded plan via root {rid} failed", sk, gk)

        for (sk, rid), entry in sorted(self.coverage.latch_entries.items()):
            state = self.lattice.codec.decode(sk)
            ok, target = self.lattice.can_latch(state, self.roots[rid].path)
            if not ok or self.lattice.key(target) != entry.target_key:
                self._violation("latch", f"latch onto root {rid} is infeasible", sk)
                continue
            for gk in sorted(entry.goals)[:1]:
                result = self.planner.plan_with_experience(
                    target, self.region.from_key(gk), self.roots[rid].path, self.stack.bounded_budget
                )
                self.report.recertified += 1
                if not result.success:
                    self._violation("latch", f"certified latch goal fails via root {rid}", sk, gk)

    def cross_check_certificates(self) -> None:
        """Every certificate has its map entry and every map entry has its certificate."""
        entries = self.coverage.entries
        for root in self.roots.values():
            for sk, goals in sorted(root.certificates.items()):
                for gk in sorted(goals):
                    rid = entries.get((sk, gk))
                    if rid is None:
                        self._violation("certificate", f"root {root.id} certified the pair but the map has no entry", sk, gk)
                    elif rid != root.id:
                        self._violation("certificate", f"map points to root {rid}, certificate to {root.id}", sk, gk)
        for (sk, gk), rid in sorted(entries.items()):
            if gk not in self.roots[rid].certificates.get(sk, ()):
                self._violation("certificate", f"map entry -> root {rid} has no certificate", sk, gk)

    def check_completeness(self) -> None:
        """Every oracle-reachable (replannable stored state, goal) pair must be answered by a query."""
        goals = sorted(self.region.key(g) for g in self.region.goals())
        seen = set()
        for root in sorted(self.roots.values(), key=lambda r: r.id):
            for s in self._replannable(root):
                if s in seen:
                    continue
                seen.add(s)
                for gk in goals:
                    self.report.oracle_pairs += 1
                    if not self._oracle_reachable(s, gk):
                        continue
                    self.report.oracle_reachable += 1
                    sk = self.lattice.key(s)
                    try:
                        path, _ = self.engine.query(self.region.from_key(gk), root.path, s)
                    except CoverageIntegrityError as e:
                        self._violation("completeness", str(e), sk, gk)
                        continue
                    if path is None:
                        self._violation("completeness", "oracle reaches the goal but the query failed", sk, gk)

    def check_constant_time(self, queries: int) -> None:
        """Lookup, planner-call and expansion bounds on random (state, goal) queries."""
        roots = sorted(self.roots.values(), key=lambda r: r.id)
        candidates = [(r, s) for r in roots for s in self._replannable(r)]
        if not candidates:
            return
        walls = []
        for _ in range(queries):
            root, s = candidates[int(self.rng.integers(len(candidates)))]
            gk = int(self.rng.integers(self.region.size))
            g: GoalPose = self.region.from_key(gk)
            sk = self.lattice.key(s)
            t0 = time.perf_counter()
            try:
                _, stats = self.engine.query(g, root.path, s)
            except CoverageIntegrityError as e:
                self._violation("constant-time", str(e), sk, gk)
                continue
            walls.append(time.perf_counter() - t0)
            self.report.queries += 1
            r = self.report
            r.max_lookups = max(r.max_lookups, stats.map_lookups)
            r.max_planner_calls = max(r.max_planner_calls, stats.planner_calls)
            r.max_expansions = max(r.max_expansions, stats.plan_expansions)
            if stats.map_lookups > r.lookup_bound:
                self._violation("constant-time", f"{stats.map_lookups} lookups > {r.lookup_bound}", sk, gk)
            if stats.planner_calls > 1:
                self._violation("constant-time", f"{stats.planner_calls} planner calls", sk, gk)
            if stats.plan_expansions > r.bounded_budget:
                self._violation("constant-time", f"{stats.plan_expansions} expansions > {r.bounded_budget}", sk, gk)
        if walls:
            arr = np.asarray(walls)
            self.report.wall_time_max = float(arr.max())
            self.report.wall_time_p50 = float(np.percentile(arr, 50))
            self.report.wall_time_p99 = float(np.percentile(arr, 99))
            if self.report.wall_time_max > self.report.time_bound:
                logger.warning(
                    "⚠️ Query wall time above the time bound on this machine",
                    wall_time_max=round(self.report.wall_time_max, 4),
                    time_bound=self.report.time_bound,
                )

    def audit_monotonicity(self) -> None:
        """
        Reachability: unreachable from a state stays unreachable from later states on the path.
        Coverage: a covered pair stays plannable from earlier states of the same root path.
        """
        goals = sorted(self.region.key(g) for g in self.region.goals())
        for root in sorted(self.roots.values(), key=lambda r: r.id):
            states = self._replannable(root)
            for gk in goals:
                blocked = False
                for s in states:
                    reachable = self._oracle_reachable(s, gk)
                    if blocked and reachable:
                        self._audit("O1", f"goal reachable again later on root {root.id}", self.lattice.key(s), gk)
                    blocked = blocked or not reachable

            origin_idx = root.path.index_of(root.origin_state) or 0
            for sk, goals_at in sorted(root.certificates.items()):
                idx = root.path.index_of(self.lattice.codec.decode(sk))
                if idx is None:
                    continue
                for gk in sorted(goals_at):
                    g = self.region.from_key(gk)
                    for earlier in root.states[origin_idx:idx]:
                        result = self.planner.plan_with_experience(earlier, g, root.path, self.stack.bounded_budget)
                        if not result.success:
                            self._audit("O2", f"covered at t={idx} but not from earlier state on root {root.id}",
                                        self.lattice.key(earlier), gk)

    def run(self, samples: int, queries: int, oracle_max_goals: int) -> VerificationReport:
        start = time.perf_counter()
        self.recertify(samples)
        self.cross_check_certificates()
        if self.region.size <= oracle_max_goals:
            self.check_completeness()
            self.audit_monotonicity()
        else:
            self.report.oracle_skipped = True
            logger.info("Oracle checks skipped", goals=self.region.size, oracle_max_goals=oracle_max_goals)
        self.check_constant_time(queries)
        r = self.report
        log = logger.info if r.ok else logger.error
        log(
            "✅ Artifact verified" if r.ok else "❌ Artifact verification failed",
            violations=len(r.violations),
            audit_violations=len(r.audit_violations),
            recertified=r.recertified,
            queries=r.queries,
            max_lookups=r.max_lookups,
            elapsed=round(time.perf_counter() - start, 3),
        )
        return r


def verify_artifact(
    stack: PlanningStack, coverage: CoverageMap, root_paths: List[RootPath], seed: Optional[int] = None
) -> VerificationReport:
    bench = stack.config.benchmark
    verifier = ArtifactVerifier(stack, coverage, root_paths, bench.seed if seed is None else seed)
    return verifier.run(bench.verify_samples, bench.verify_queries, bench.oracle_max_goals)
