from scripts.planner.factory import build_stack
from scripts.planner.preprocessor import Preprocessor, bounded_budget_for
from scripts.planner.search import SearchBudget


def make_preprocessor(stack, root_budget=None, **kwargs):
    return Preprocessor(
        stack.lattice,
        stack.planner,
        stack.home,
        stack.cutoff_disc,
        root_budget or stack.root_budget,
        stack.bounded_budget,
        **kwargs,
    )


def test_empty_goal_set(tiny_stack):
    pre = make_preprocessor(tiny_stack)
    assert pre.preprocess(tiny_stack.home, set(), set()) == (set(), set())
    assert pre.root_paths == []
    assert pre.coverage.entries == {}


def test_every_goal_unreachable_is_recorded_at_the_start(tiny_stack):
    pre = make_preprocessor(tiny_stack, root_budget=SearchBudget(1))
    goals = {tiny_stack.region.key(g) for g in tiny_stack.region.goals()}
    unreachable, covered = pre.preprocess(tiny_stack.home, goals, set())
    assert unreachable == goals
    assert covered == set()
    assert pre.root_paths == []
    assert pre.coverage.unreachable[tiny_stack.lattice.key(tiny_stack.home)] == goals


def test_single_goal(tiny_stack):
    pre = make_preprocessor(tiny_stack)
    unreachable, covered = pre.preprocess(tiny_stack.home, {1}, set())
    assert unreachable == set()
    assert covered == {1}
    assert pre.root_paths[0].goal == tiny_stack.region.from_key(1)
    assert pre.coverage.lookup(tiny_stack.lattice.key(tiny_stack.home), 1) == 0


def test_covered_and_unreachable_partition_the_region(tiny_stack, tiny_preprocessed):
    full = {tiny_stack.region.key(g) for g in tiny_stack.region.goals()}
    assert tiny_preprocessed.covered | tiny_preprocessed.unreachable == full
    assert not tiny_preprocessed.covered & tiny_preprocessed.unreachable
    home_key = tiny_stack.lattice.key(tiny_stack.home)
    for gk in tiny_preprocessed.covered:
        assert tiny_preprocessed.coverage.lookup(home_key, gk) is not None


def test_home_paths_are_the_first_root_paths(tiny_preprocessed):
    coverage = tiny_preprocessed.coverage
    assert coverage.home_paths
    origins = {r.id: r.origin_state for r in tiny_preprocessed.root_paths}
    home = tiny_preprocessed.root_paths[0].origin_state
    assert all(origins[h] == home for h in coverage.home_paths)


def test_entries_and_certificates_agree(tiny_preprocessed):
    roots = {r.id: r for r in tiny_preprocessed.root_paths}
    for (sk, gk), rid in tiny_preprocessed.coverage.entries.items():
        assert gk in roots[rid].certificates[sk]
    for root in roots.values():
        for sk, goals in root.certificates.items():
            for gk in goals:
                assert tiny_preprocessed.coverage.lookup(sk, gk) == root.id


def test_entries_only_at_replannable_states(tiny_stack, tiny_preprocessed):
    codec = tiny_stack.lattice.codec
    for sk, _ in tiny_preprocessed.coverage.entries:
        assert codec.decode(sk).t_disc <= tiny_stack.cutoff_disc


def test_entries_replan_within_the_bounded_budget(tiny_stack, tiny_preprocessed):
    lat = tiny_stack.lattice
    roots = {r.id: r for r in tiny_preprocessed.root_paths}
    for (sk, gk), rid in sorted(tiny_preprocessed.coverage.entries.items()):
        result = tiny_stack.planner.plan_with_experience(
            lat.codec.decode(sk), tiny_stack.region.from_key(gk), roots[rid].path, tiny_stack.bounded_budget
        )
        assert result.success


def test_zero_cutoff_stores_home_entries_only(tiny_config, config_factory):
    stack = build_stack(config_factory(tiny_config, preprocess={"replan_cutoff": 0.0}), calibrate=False)
    result = stack.preprocessor().run()
    home_key = stack.lattice.key(stack.home)
    assert result.coverage.entries
    assert {sk for sk, _ in result.coverage.entries} == {home_key}
    assert result.stats.max_depth == 0


def test_preprocessing_is_deterministic(tiny_stack, tiny_preprocessed):
    again = tiny_stack.preprocessor().run()
    assert again.coverage.entries == tiny_preprocessed.coverage.entries
    assert again.coverage.latch_entries == tiny_preprocessed.coverage.latch_entries
    assert [r.path.states for r in again.root_paths] == [r.path.states for r in tiny_preprocessed.root_paths]


def test_try_latching_matches_brute_force(tiny_stack, tiny_preprocessed):
    pre = make_preprocessor(tiny_stack, certify_latches=False)
    pre.root_paths = tiny_preprocessed.root_paths
    home_ids = tiny_preprocessed.coverage.home_paths
    lat = tiny_stack.lattice
    full = {tiny_stack.region.key(g) for g in tiny_stack.region.goals()}

    for root in tiny_preprocessed.root_paths:
        for s in root.states[1:]:
            if s.t_disc > tiny_stack.cutoff_disc:
                break
            expected = set()
            for hid in home_ids:
                ok, _ = lat.can_latch(s, pre.root_paths[hid].path)
                if ok:
                    expected |= pre.root_paths[hid].covered_goals & full
            uncov, cov = pre.try_latching(s, home_ids, full, set())
            assert cov == expected
            assert uncov == full - expected


def test_bounded_budget_for():
    assert bounded_budget_for(0.5, 0.5, 0.0625).max_expansions == 4
    assert bounded_budget_for(0.2, 0.5, 10.0).max_expansions == 1


def test_latching_needs_fewer_root_paths(tight_stack, tight_preprocessed):
    # one bounded expansion certifies nothing but a path's own goal, so every
    # goal a latch does not absorb costs a root path of its own
    without = tight_stack.preprocessor(enable_latching=False).run()
    assert without.coverage.latch_entries == {}
    assert tight_preprocessed.coverage.latch_entries
    assert tight_preprocessed.covered == without.covered
    assert len(tight_preprocessed.root_paths) < len(without.root_paths)
    assert tight_preprocessed.stats.latch_certificates > 0


def test_latch_entries_point_at_home_path_states(tight_stack, tight_preprocessed):
    lat = tight_stack.lattice
    roots = tight_preprocessed.root_paths
    home_ids = set(tight_preprocessed.coverage.home_paths)
    for (sk, hid), entry in tight_preprocessed.coverage.latch_entries.items():
        assert hid in home_ids
        s = lat.codec.decode(sk)
        assert s.t_disc <= tight_stack.cutoff_disc
        ok, target = lat.can_latch(s, roots[hid].path)
        assert ok
        assert lat.key(target) == entry.target_key
        assert entry.goals <= roots[hid].covered_goals
