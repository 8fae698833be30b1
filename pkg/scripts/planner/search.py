"""
Weighted A* over the lattice, the intercept heuristic, and experience reuse.

Planning with experience adds one extra successor to every state on the
experience path: the shortcut state, i.e. the state on that path with the
smallest heuristic to the new goal.
"""

import heapq
import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from scripts.planner.errors import ContractViolation
from scripts.planner.kinematics import swept_collides, symmetric_angle_diff
from scripts.planner.lattice import EPS, GoalPose, Lattice, Primitive, PrimitiveKind, State


class BudgetPurpose(str, Enum):
    ROOT_PATH = "root-path"
    BOUNDED = "bounded"


@dataclass(frozen=True)
class SearchBudget:
    max_expansions: int
    purpose: BudgetPurpose = BudgetPurpose.BOUNDED

    def __post_init__(self):
        if self.max_expansions <= 0:
            raise ContractViolation("max_expansions must be > 0")


@dataclass(frozen=True)
class SearchParams:
    heuristic_lambda: float = 1.0
    angle_weight: float = 1.0
    weight: float = 50.0
    sentinel: float = 1.0e6


@dataclass
class Path:
    states: List[State]
    primitives: List[Primitive]
    goal: GoalPose
    terminal_grasp: bool = False
    grasp_trajectory: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    _index: Optional[Dict[State, int]] = field(default=None, init=False, compare=False, repr=False)

    def __post_init__(self):
        if not self.states:
            raise ContractViolation("path needs at least one state")
        if len(self.primitives) != len(self.states) - 1:
            raise ContractViolation("path needs one primitive per edge")
        for a, b in zip(self.states, self.states[1:]):
            if b.t_disc <= a.t_disc:
                raise ContractViolation(f"path time not strictly increasing at {a} -> {b}")

    @property
    def start(self) -> State:
        return self.states[0]

    @property
    def end(self) -> State:
        return self.states[-1]

    def duration(self, time_step: float) -> float:
        return (self.end.t_disc - self.start.t_disc) * time_step

    def index_of(self, state: State) -> Optional[int]:
        if self._index is None:
            self._index = {s: i for i, s in enumerate(self.states)}
        return self._index.get(state)

    def state_at(self, t_disc: int) -> Optional[State]:
        return next((s for s in self.states if s.t_disc == t_disc), None)

    def suffix(self, idx: int) -> "Path":
        return Path(
            list(self.states[idx:]),
            list(self.primitives[idx:]),
            self.goal,
            self.terminal_grasp,
            self.grasp_trajectory,
        )

    def validate(self, lattice: Lattice) -> bool:
        """Replay every edge: connectivity, time grid and collision-freedom."""
        for i, prim in enumerate(self.primitives):
            a, b = self.states[i], self.states[i + 1]
            if prim.kind == PrimitiveKind.DYNAMIC_GRASP:
                if i != len(self.primitives) - 1 or not self.terminal_grasp:
                    return False
                if not self._grasp_valid(lattice, a, b, prim):
                    return False
            elif not lattice.edge_valid(a, b, prim, self.goal):
                return False
        return True

    def _grasp_valid(self, lattice: Lattice, a: State, b: State, prim: Primitive) -> bool:
        traj = self.grasp_trajectory
        if traj is None or len(traj) < 2:
            return False
        dt = lattice.params.time_step
        if b.t_disc - a.t_disc != int(round(prim.duration / dt)):
            return False
        if abs(traj[0, 0] - lattice.time_of(a)) > 1e-6 or abs(traj[-1, 0] - lattice.time_of(b)) > 1e-6:
            return False
        if np.any(np.abs(traj[0, 1:] - lattice.q_of(a)) > 1e-6):
            return False
        if lattice.snap_q(traj[-1, 1:]) != b.q_disc:
            return False
        pose = lattice.object_pose(self.goal)
        return not swept_collides(
            lattice.arm, lattice.world, traj[:, 1:], traj[:, 0], pose, lattice.params.replan_cutoff
        )


@dataclass
class SearchResult:
    success: bool
    path: Optional[Path]
    expansions: int
    reason: str = ""
    generated: int = 0


class _GraspNode(NamedTuple):
    state: State


class _ShortcutEdge(NamedTuple):
    from_idx: int
    to_idx: int


Node = Union[State, _GraspNode]


def intercept_time(d: Sequence[float], u: Sequence[float], v_max: float) -> Optional[float]:
    """
    Smallest tau >= 0 with |d + u*tau| <= v_max*tau.

    ``d`` is the object position relative to the EE, ``u`` the object velocity.
    Returns None when the EE can never catch the object.
    """
    dd = float(d[0] * d[0] + d[1] * d[1])
    if dd <= 0.0:
        return 0.0
    du = float(d[0] * u[0] + d[1] * u[1])
    a = v_max * v_max - float(u[0] * u[0] + u[1] * u[1])
    if abs(a) < 1e-12:
        return -dd / (2.0 * du) if du < 0 else None
    disc = du * du + a * dd
    if a > 0:
        return (du + math.sqrt(disc)) / a
    if disc < 0 or du >= 0:
        return None
    return (du + math.sqrt(disc)) / a


class Planner:
    """Weighted A* with optional experience; one instance is shared across searches."""

    def __init__(self, lattice: Lattice, params: SearchParams):
        self.lattice = lattice
        self.params = params
        self._v_ee = lattice.arm.max_ee_speed
        self._reach = lattice.arm.max_reach + lattice.params.enclosure_position_tol

    # ------------------------------------------------------------------ heuristic

    def heuristic(self, s: State, g: GoalPose) -> float:
        """max(lambda * intercept time, angle_weight * yaw difference); sentinel when no grasp is possible."""
        lat = self.lattice
        world = lat.world
        pose = lat.object_pose(g)
        t = lat.time_of(s)
        ee = lat.ee_pose(s)
        cx, cy = world.object_center(pose, t)
        tau = intercept_time((cx - ee.position[0], cy - ee.position[1]), (world.conveyor_speed, 0.0), self._v_ee)
        if tau is None:
            return self.params.sentinel
        t_hit = t + tau
        slack = lat.params.time_step
        if t_hit > lat.exit_time(g) + slack or t_hit > lat.params.horizon + lat.params.grasp_timeout:
            return self.params.sentinel
        bx, by = lat.arm.base_position
        dy = pose[1] - by
        if abs(dy) > self._reach:
            return self.params.sentinel
        half = math.sqrt(self._reach * self._reach - dy * dy)
        t_leaves_reach = (bx + half - pose[0]) / world.conveyor_speed
        if t_hit > t_leaves_reach + slack:
            return self.params.sentinel
        angle = abs(symmetric_angle_diff(ee.orientation, pose[2], lat.params.grasp_symmetry))
        return max(self.params.heuristic_lambda * tau, self.params.angle_weight * angle)

    # ------------------------------------------------------------------ experience

    def _shortcut_candidates(self, path: Path) -> int:
        """Number of leading states eligible as shortcut targets."""
        if path.terminal_grasp and len(path.states) > 1:
            return len(path.states) - 1
        return len(path.states)

    def shortcut_index(self, path: Path, g: GoalPose) -> int:
        best_idx, best_h = 0, math.inf
        for i in range(self._shortcut_candidates(path)):
            h = self.heuristic(path.states[i], g)
            if h < best_h:
                best_idx, best_h = i, h
        return best_idx

    def shortcut_state(self, path: Path, g: GoalPose) -> State:
        """Earliest state on the path with minimal heuristic to g."""
        path = getattr(path, "path", path)
        return path.states[self.shortcut_index(path, g)]

    # ------------------------------------------------------------------ search

    def plan(self, start: State, g: GoalPose, budget: SearchBudget, weight: Optional[float] = None) -> SearchResult:
        return self._search(start, g, budget, self.params.weight if weight is None else weight, None)

    def plan_with_experience(
        self,
        start: State,
        g: GoalPose,
        root,
        budget: SearchBudget,
        weight: Optional[float] = None,
    ) -> SearchResult:
        """Weighted A* where states on the experience path also lead to its shortcut state."""
        path: Path = getattr(root, "path", root)
        start_idx = path.index_of(start)
        if start_idx is None:
            raise ContractViolation(f"experience start {start} is not on the experience path")

        # own goal: the remaining experience already ends in a grasp of g
        if g == path.goal and path.terminal_grasp and start_idx < len(path.states) - 1:
            return SearchResult(True, path.suffix(start_idx), 1, "", 0)

        sc_idx = self.shortcut_index(path, g)
        ok_from = [False] * (sc_idx + 1)
        ok_from[sc_idx] = True
        for i in range(sc_idx - 1, -1, -1):
            if not ok_from[i + 1]:
                break
            ok_from[i] = self.lattice.edge_valid(path.states[i], path.states[i + 1], path.primitives[i], g)
        experience = (path, sc_idx, ok_from)
        return self._search(start, g, budget, self.params.weight if weight is None else weight, experience)

    def _search(self, start: State, g: GoalPose, budget: SearchBudget, weight: float, experience) -> SearchResult:
        lat = self.lattice
        sentinel = self.params.sentinel
        counter = itertools.count()
        g_cost: Dict[Node, float] = {start: 0.0}
        parents: Dict[Node, Tuple[Node, Union[Primitive, _ShortcutEdge]]] = {}
        closed = set()
        open_list: List[Tuple[float, float, int, int, Node]] = []

        h0 = self.heuristic(start, g)
        heapq.heappush(open_list, (weight * min(h0, sentinel), -0.0, lat.key(start), next(counter), start))
        expansions = 0
        generated = 0

        while open_list:
            _, _, _, _, node = heapq.heappop(open_list)
            if node in closed:
                continue
            if isinstance(node, _GraspNode):
                path = self._reconstruct(node, parents, g, experience)
                return SearchResult(True, path, expansions, "", generated)
            if expansions >= budget.max_expansions:
                return SearchResult(False, None, expansions, "budget exhausted", generated)
            closed.add(node)
            expansions += 1
            g_node = g_cost[node]

            for succ, edge, cost in self._expand(node, g, experience):
                if succ in closed:
                    continue
                new_g = g_node + cost
                if new_g >= g_cost.get(succ, math.inf) - EPS:
                    continue
                if isinstance(succ, _GraspNode):
                    h = 0.0
                else:
                    h = self.heuristic(succ, g)
                    if h >= sentinel:
                        continue
                g_cost[succ] = new_g
                parents[succ] = (node, edge)
                generated += 1
                key = lat.key(succ.state if isinstance(succ, _GraspNode) else succ)
                heapq.heappush(open_list, (new_g + weight * h, -new_g, key, next(counter), succ))

        return SearchResult(False, None, expansions, "open list exhausted", generated)

    def _expand(self, s: State, g: GoalPose, experience):
        lat = self.lattice
        out = []
        for succ, prim, cost in lat.successors(s, g):
            if prim.kind == PrimitiveKind.DYNAMIC_GRASP:
                node = _GraspNode(succ)
                out.append((node, prim, cost))
            else:
                out.append((succ, prim, cost))
        if experience is not None:
            path, sc_idx, ok_from = experience
            idx = path.index_of(s)
            if idx is not None and idx < sc_idx and ok_from[idx]:
                target = path.states[sc_idx]
                cost = (target.t_disc - s.t_disc) * lat.params.time_step
                out.append((target, _ShortcutEdge(idx, sc_idx), cost))
        return out

    def _reconstruct(self, node: _GraspNode, parents, g: GoalPose, experience) -> Path:
        lat = self.lattice
        states: List[State] = [node.state]
        prims: List[Primitive] = []
        pre_grasp, grasp_prim = parents[node]
        grasp = lat.dynamic_grasp(pre_grasp, g)
        prims.append(grasp_prim)
        current: Node = pre_grasp
        while True:
            states.append(current)
            if current not in parents:
                break
            prev, edge = parents[current]
            if isinstance(edge, _ShortcutEdge):
                exp_path = experience[0]
                # splice the traversed experience segment, excluding the endpoints already handled
                inner = exp_path.states[edge.from_idx + 1:edge.to_idx]
                seg_prims = exp_path.primitives[edge.from_idx:edge.to_idx]
                for st in reversed(inner):
                    states.append(st)
                prims.extend(reversed(seg_prims))
            else:
                prims.append(edge)
            current = prev
        states.reverse()
        prims.reverse()
        return Path(states, prims, g, terminal_grasp=True, grasp_trajectory=grasp.trajectory)
