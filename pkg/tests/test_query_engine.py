import numpy as np
import pytest

from scripts.planner.errors import ContractViolation
from scripts.planner.lattice import PrimitiveKind, State
from scripts.planner.preprocessor import CoverageMap, LatchEntry
from scripts.planner.query_engine import ExecutionState, QueryOutcome, merge_paths
from scripts.planner.search import Path
from utils.artifact_verifier import ArtifactVerifier


@pytest.fixture(scope="module")
def engine(tiny_stack, tiny_preprocessed):
    return tiny_stack.query_engine(tiny_preprocessed.coverage, tiny_preprocessed.root_paths)


def replannable(stack, root):
    return [s for s in root.states if s.t_disc <= stack.cutoff_disc]


def test_same_goal_is_unchanged(engine, tiny_preprocessed):
    root = tiny_preprocessed.root_paths[0]
    path, stats = engine.query(root.goal, root.path, root.states[0])
    assert path is root.path
    assert stats.outcome == QueryOutcome.UNCHANGED
    assert stats.map_lookups == 0
    assert stats.planner_calls == 0


def test_plan_from_home_covers_every_covered_goal(engine, tiny_stack, tiny_preprocessed):
    for gk in sorted(tiny_preprocessed.covered):
        g = tiny_stack.region.from_key(gk)
        path, stats = engine.plan_from_home(g)
        assert path is not None
        assert path.start == tiny_stack.home
        assert path.goal == g
        assert path.terminal_grasp
        assert path.validate(tiny_stack.lattice)
        assert stats.map_lookups == 1
        assert stats.planner_calls == 1


def test_replanning_from_any_replannable_state(engine, tiny_stack, tiny_preprocessed):
    """Every (stored state, covered goal) query merges into a valid path within constant work."""
    lat = tiny_stack.lattice
    bound = tiny_stack.cutoff_disc + 1
    for root in tiny_preprocessed.root_paths:
        for s in replannable(tiny_stack, root):
            for gk in sorted(tiny_preprocessed.covered):
                g = tiny_stack.region.from_key(gk)
                path, stats = engine.query(g, root.path, s)
                assert stats.map_lookups <= bound
                assert stats.planner_calls <= 1
                assert stats.plan_expansions <= tiny_stack.bounded_budget.max_expansions
                if path is None:
                    assert stats.outcome == QueryOutcome.FAILURE_UNREACHABLE
                    continue
                assert stats.outcome in (QueryOutcome.REPLANNED, QueryOutcome.LATCHED, QueryOutcome.UNCHANGED)
                assert path.goal == g
                assert path.validate(lat)
                # the executed prefix up to s is kept
                idx = root.path.index_of(s)
                assert path.states[: idx + 1] == root.states[: idx + 1]
                assert stats.transition_t is None or stats.transition_t >= s.t_disc


def test_query_from_home_reaches_covered_goals(engine, tiny_stack, tiny_preprocessed):
    for root in tiny_preprocessed.root_paths:
        if root.origin_state != tiny_stack.home:
            continue
        for gk in sorted(tiny_preprocessed.covered):
            path, _ = engine.query(tiny_stack.region.from_key(gk), root.path, tiny_stack.home)
            assert path is not None


def test_scan_runs_backwards_from_the_cutoff(engine, tiny_stack, tiny_preprocessed):
    root = max(tiny_preprocessed.root_paths, key=lambda r: len(replannable(tiny_stack, r)))
    other = next(gk for gk in sorted(tiny_preprocessed.covered) if tiny_stack.region.from_key(gk) != root.goal)
    _, stats = engine.query(tiny_stack.region.from_key(other), root.path, root.states[0])
    assert stats.scanned == sorted(stats.scanned, reverse=True)
    assert stats.scanned[0] == replannable(tiny_stack, root)[-1].t_disc


def test_empty_map_reports_a_coverage_gap(tiny_stack, tiny_preprocessed):
    root = tiny_preprocessed.root_paths[0]
    engine = tiny_stack.query_engine(CoverageMap(), tiny_preprocessed.root_paths)
    other = next(g for g in tiny_stack.region.goals() if g != root.goal)
    path, stats = engine.query(other, root.path, root.states[0])
    assert path is None
    assert stats.outcome == QueryOutcome.FAILURE_UNREACHABLE
    assert stats.coverage_gap
    assert stats.planner_calls == 0


def test_recorded_unreachable_is_not_a_gap(tiny_stack, tiny_preprocessed):
    root = tiny_preprocessed.root_paths[0]
    other = next(g for g in tiny_stack.region.goals() if g != root.goal)
    coverage = CoverageMap(unreachable={tiny_stack.lattice.key(root.states[0]): {tiny_stack.region.key(other)}})
    engine = tiny_stack.query_engine(coverage, tiny_preprocessed.root_paths)
    path, stats = engine.query(other, root.path, root.states[0])
    assert path is None
    assert not stats.coverage_gap


def test_start_must_be_replannable_and_on_the_path(engine, tiny_stack, tiny_preprocessed):
    root = max(tiny_preprocessed.root_paths, key=lambda r: len(r.states))
    g = next(g for g in tiny_stack.region.goals() if g != root.goal)
    late = next((s for s in root.states if s.t_disc > tiny_stack.cutoff_disc), None)
    if late is not None:
        with pytest.raises(ContractViolation):
            engine.query(g, root.path, late)
    with pytest.raises(ContractViolation):
        engine.query(g, root.path, State(root.states[0].q_disc, 1000))


def test_select_start_looks_one_time_bound_ahead(engine, tiny_stack, tiny_preprocessed):
    root = max(tiny_preprocessed.root_paths, key=lambda r: len(r.states))
    dt = tiny_stack.lattice.params.time_step
    s = engine.select_start(root.path, 0.0)
    assert s is not None
    assert tiny_stack.lattice.time_of(s) > engine.time_bound
    assert all(tiny_stack.lattice.time_of(x) <= engine.time_bound for x in root.states if x.t_disc < s.t_disc)
    # past the cutoff nothing is replannable
    assert engine.select_start(root.path, (tiny_stack.cutoff_disc + 1) * dt) is None


def test_merge_paths_requires_a_shared_state(tiny_preprocessed):
    a, b = tiny_preprocessed.root_paths[0], tiny_preprocessed.root_paths[0]
    merged = merge_paths(a.path, b.path.suffix(1), a.states[1])
    assert merged.states == a.states
    with pytest.raises(ContractViolation):
        merge_paths(a.path, b.path.suffix(1), a.states[0])


def test_latch_merge_rejects_infeasible_targets(engine, tiny_stack, tiny_preprocessed):
    root = max(tiny_preprocessed.root_paths, key=lambda r: len(r.states))
    lat = tiny_stack.lattice
    s = root.states[0]
    q = s.q_disc
    far = State(((q[0] + 45) % lat.levels,) + q[1:], s.t_disc + 1)
    bogus = Path([far, State(far.q_disc, far.t_disc + 1)], [lat.latch_primitive(far)], root.goal)
    with pytest.raises(ContractViolation):
        engine.merge_paths_by_latching(root.path, bogus, s)


def latch_pair(stack, preprocessed):
    """A replannable state on one root path that can latch onto a home path with another goal."""
    lat = stack.lattice
    roots = preprocessed.root_paths
    for root in roots:
        for s in replannable(stack, root)[1:]:
            for hid in preprocessed.coverage.home_paths:
                home = roots[hid]
                if home.id == root.id or home.goal == root.goal:
                    continue
                ok, target = lat.can_latch(s, home.path)
                if ok and home.path.index_of(target) < len(home.states) - 1:
                    return root, s, home, target
    raise AssertionError("no latchable state in the scenario")


def latch_only_engine(stack, preprocessed, s, home, target):
    lat = stack.lattice
    gk = stack.region.key(home.goal)
    coverage = CoverageMap(
        entries={(lat.key(stack.home), gk): home.id},
        latch_entries={(lat.key(s), home.id): LatchEntry(lat.key(target), frozenset({gk}))},
        home_paths=list(preprocessed.coverage.home_paths),
    )
    return stack.query_engine(coverage, preprocessed.root_paths)


def test_latched_query_rejoins_the_home_path(tight_stack, tight_preprocessed):
    lat = tight_stack.lattice
    root, s, home, target = latch_pair(tight_stack, tight_preprocessed)
    engine = latch_only_engine(tight_stack, tight_preprocessed, s, home, target)

    path, stats = engine.query(home.goal, root.path, s)

    assert stats.outcome == QueryOutcome.LATCHED
    assert stats.transition_t == s.t_disc
    assert stats.latch_checks == 1
    assert stats.planner_calls == 1
    # every scanned state plus the single home read
    assert stats.map_lookups == len(stats.scanned) + 1
    assert stats.map_lookups <= tight_stack.cutoff_disc + 1
    assert path.goal == home.goal
    assert path.validate(lat)

    idx = root.path.index_of(s)
    assert path.states[: idx + 1] == root.states[: idx + 1]
    assert path.states[idx + 1] == target
    latches = [p for p in path.primitives if p.kind == PrimitiveKind.LATCH]
    assert len(latches) == 1
    assert latches[0].target_state == target
    assert path.primitives[idx] is latches[0]


def test_latch_merge_splices_prefix_latch_and_home_suffix(tight_stack, tight_preprocessed):
    lat = tight_stack.lattice
    root, s, home, target = latch_pair(tight_stack, tight_preprocessed)
    engine = tight_stack.query_engine(tight_preprocessed.coverage, tight_preprocessed.root_paths)
    tail = home.path.suffix(home.path.index_of(target))

    merged = engine.merge_paths_by_latching(root.path, tail, s)

    idx = root.path.index_of(s)
    assert merged.states == root.states[: idx + 1] + tail.states
    assert merged.primitives == root.path.primitives[:idx] + [lat.latch_primitive(target)] + tail.primitives
    assert merged.goal == home.goal
    assert merged.terminal_grasp
    assert merged.validate(lat)


def test_home_lookup_counts_once(tiny_stack, tiny_preprocessed):
    root = max(tiny_preprocessed.root_paths, key=lambda r: len(replannable(tiny_stack, r)))
    assert root.states[0] == tiny_stack.home
    engine = tiny_stack.query_engine(
        CoverageMap(home_paths=list(tiny_preprocessed.coverage.home_paths)), tiny_preprocessed.root_paths
    )
    other = next(g for g in tiny_stack.region.goals() if g != root.goal)
    path, stats = engine.query(other, root.path, tiny_stack.home)
    assert path is None
    # the scan's own read at the home state answers the latch fallback too
    assert stats.scanned[-1] == 0
    assert stats.map_lookups == len(stats.scanned) == len(replannable(tiny_stack, root))
    assert stats.map_lookups <= tiny_stack.cutoff_disc + 1


def test_execution_state_tracks_the_reached_state(engine, tiny_stack, tiny_preprocessed):
    root = max(tiny_preprocessed.root_paths, key=lambda r: len(r.states))
    dt = tiny_stack.lattice.params.time_step
    at_start = ExecutionState.at(root.path, 0.0, dt)
    assert at_start.current_state == root.states[0]
    midway = ExecutionState.at(root.path, 0.75, dt)
    assert midway.current_state.t_disc * dt <= 0.75 < root.states[midway.index + 1].t_disc * dt
    assert engine.start_for(at_start) == engine.select_start(root.path, 0.0)
    late = Path([State(root.states[0].q_disc, 4)], [], root.goal)
    with pytest.raises(ContractViolation):
        ExecutionState.at(late, 1.0, dt)


def test_thousand_merges_replay(engine, tiny_stack, tiny_preprocessed):
    lat = tiny_stack.lattice
    region = tiny_stack.region
    coverage = tiny_preprocessed.coverage
    rng = np.random.default_rng(11)
    covered = [
        (r, s, gk)
        for r in tiny_preprocessed.root_paths
        for s in replannable(tiny_stack, r)
        for gk in range(region.size)
        if gk != region.key(r.goal) and coverage.lookup(lat.key(s), gk) is not None
    ]
    assert covered
    for _ in range(1000):
        root, s, gk = covered[int(rng.integers(len(covered)))]
        g = region.from_key(gk)
        path, stats = engine.query(g, root.path, s)
        assert stats.outcome in (QueryOutcome.REPLANNED, QueryOutcome.LATCHED)
        assert stats.transition_t >= s.t_disc
        idx = root.path.index_of(s)
        assert path.states[: idx + 1] == root.states[: idx + 1]
        assert region.key(path.goal) == gk
        assert path.validate(lat)


def test_thousand_random_queries_stay_constant_time(tiny_stack, tiny_preprocessed):
    verifier = ArtifactVerifier(tiny_stack, tiny_preprocessed.coverage, tiny_preprocessed.root_paths, seed=3)
    verifier.check_constant_time(1000)
    report = verifier.report
    assert report.queries == 1000
    assert report.violations == []
    assert report.max_lookups <= report.lookup_bound == tiny_stack.cutoff_disc + 1
    assert report.max_planner_calls <= 1
    assert report.max_expansions <= report.bounded_budget
