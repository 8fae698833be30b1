import heapq
import itertools
import math

import numpy as np
import pytest

from scripts.planner.errors import ContractViolation
from scripts.planner.kinematics import EEPose, inverse_kinematics
from scripts.planner.lattice import GoalPose, PrimitiveKind, State
from scripts.planner.search import Path, Planner, SearchBudget, SearchParams, intercept_time

GOAL = GoalPose(1, 0, 0)


def _bisect_intercept(d, u, v, hi=1e3, iters=200):
    def gap(tau):
        return math.hypot(d[0] + u[0] * tau, d[1] + u[1] * tau) - v * tau

    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if gap(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return hi


def test_intercept_time_matches_bisection_when_ee_is_faster():
    rng = np.random.default_rng(1)
    for _ in range(500):
        d = rng.uniform(-2, 2, size=2)
        u = (float(rng.uniform(-0.3, 0.3)), 0.0)
        v = float(rng.uniform(0.35, 2.0))
        tau = intercept_time(d, u, v)
        assert tau is not None
        assert tau == pytest.approx(_bisect_intercept(d, u, v), abs=1e-6)


def test_intercept_time_edge_cases():
    assert intercept_time((0.0, 0.0), (0.2, 0.0), 1.0) == 0.0
    # object running away faster than the EE can move
    assert intercept_time((1.0, 0.0), (0.5, 0.0), 0.2) is None
    # equal speeds, object approaching head-on
    assert intercept_time((1.0, 0.0), (-0.5, 0.0), 0.5) == pytest.approx(1.0)


def test_heuristic_is_near_zero_on_the_object(tiny_stack):
    lat = tiny_stack.lattice
    pose = lat.object_pose(GOAL)
    cx, cy = lat.world.object_center(pose, 3.0)
    q = inverse_kinematics(lat.arm, EEPose((cx, cy), math.pi))
    s = lat.make_state(q, 6)
    # gripper symmetry: yaw pi grasps an object at yaw 0
    assert tiny_stack.planner.heuristic(s, GOAL) < 0.1


def test_heuristic_sentinel_after_the_object_leaves(tiny_stack):
    lat = tiny_stack.lattice
    late = int(math.ceil(lat.exit_time(GOAL) / lat.params.time_step)) + 2
    h = tiny_stack.planner.heuristic(State(tiny_stack.home.q_disc, late), GOAL)
    assert h == tiny_stack.planner.params.sentinel


def test_budget_must_be_positive():
    with pytest.raises(ContractViolation):
        SearchBudget(0)


def test_single_expansion_budget(tiny_stack):
    result = tiny_stack.planner.plan(tiny_stack.home, GOAL, SearchBudget(1))
    assert result.expansions <= 1
    assert not result.success
    assert result.reason == "budget exhausted"


def _uniform_cost(planner, start, g, limit=200000):
    """Plain Dijkstra over lattice successors with the planner's sentinel pruning."""
    lat = planner.lattice
    sentinel = planner.params.sentinel
    counter = itertools.count()
    best = {start: 0.0}
    heap = [(0.0, next(counter), start, False)]
    while heap and limit:
        cost, _, s, is_grasp = heapq.heappop(heap)
        if is_grasp:
            return cost
        if cost > best.get(s, math.inf):
            continue
        limit -= 1
        for succ, prim, step in lat.successors(s, g):
            new = cost + step
            if prim.kind == PrimitiveKind.DYNAMIC_GRASP:
                heapq.heappush(heap, (new, next(counter), succ, True))
            elif planner.heuristic(succ, g) < sentinel and new < best.get(succ, math.inf) - 1e-9:
                best[succ] = new
                heapq.heappush(heap, (new, next(counter), succ, False))
    return None


def test_unweighted_search_without_heuristic_is_uniform_cost(tiny_stack):
    params = tiny_stack.planner.params
    planner = Planner(
        tiny_stack.lattice, SearchParams(heuristic_lambda=0.0, angle_weight=0.0, weight=1.0, sentinel=params.sentinel)
    )
    result = planner.plan(tiny_stack.home, GOAL, SearchBudget(50000))
    oracle = _uniform_cost(planner, tiny_stack.home, GOAL, limit=50000)
    assert result.success == (oracle is not None)
    if result.success:
        assert result.path.duration(tiny_stack.lattice.params.time_step) == pytest.approx(oracle)


def test_root_paths_replay(tiny_stack, tiny_preprocessed):
    assert tiny_preprocessed.root_paths
    for root in tiny_preprocessed.root_paths:
        assert root.path.terminal_grasp
        assert root.path.primitives[-1].kind == PrimitiveKind.DYNAMIC_GRASP
        assert root.path.validate(tiny_stack.lattice)


def test_validate_rejects_an_infeasible_jump(tiny_stack, tiny_preprocessed):
    lat = tiny_stack.lattice
    root = max(tiny_preprocessed.root_paths, key=lambda r: len(r.states))
    assert len(root.states) > 2
    states = list(root.states)
    q = states[1].q_disc
    states[1] = State(((q[0] + 45) % lat.levels,) + q[1:], states[1].t_disc)
    tampered = Path(states, list(root.path.primitives), root.goal, True, root.path.grasp_trajectory)
    assert not tampered.validate(lat)


def test_shortcut_is_first_heuristic_minimum(tiny_stack, tiny_preprocessed):
    planner = tiny_stack.planner
    for root in tiny_preprocessed.root_paths:
        candidates = root.states[:-1] if root.path.terminal_grasp else root.states
        for g in tiny_stack.region.goals():
            values = [planner.heuristic(s, g) for s in candidates]
            assert planner.shortcut_index(root.path, g) == values.index(min(values))
            assert planner.shortcut_state(root, g) == candidates[values.index(min(values))]


def test_experience_for_its_own_goal_returns_the_remaining_path(tiny_stack, tiny_preprocessed):
    root = max(tiny_preprocessed.root_paths, key=lambda r: len(r.states))
    result = tiny_stack.planner.plan_with_experience(root.states[1], root.goal, root.path, tiny_stack.bounded_budget)
    assert result.success
    assert result.path.states == root.states[1:]
    assert result.expansions == 1


def test_experience_start_must_lie_on_the_path(tiny_stack, tiny_preprocessed):
    root = tiny_preprocessed.root_paths[0]
    off = State(root.states[0].q_disc, root.states[-1].t_disc + 5)
    with pytest.raises(ContractViolation):
        tiny_stack.planner.plan_with_experience(off, root.goal, root.path, tiny_stack.bounded_budget)


def test_experience_plans_reach_other_goals(tiny_stack, tiny_preprocessed):
    """Every home entry re-plans within the bounded budget through its recorded root path."""
    lat = tiny_stack.lattice
    home_key = lat.key(tiny_stack.home)
    roots = {r.id: r for r in tiny_preprocessed.root_paths}
    for g in tiny_stack.region.goals():
        rid = tiny_preprocessed.coverage.lookup(home_key, tiny_stack.region.key(g))
        if rid is None:
            continue
        result = tiny_stack.planner.plan_with_experience(tiny_stack.home, g, roots[rid].path, tiny_stack.bounded_budget)
        assert result.success
        assert result.expansions <= tiny_stack.bounded_budget.max_expansions
        assert result.path.goal == g
        assert result.path.validate(lat)
