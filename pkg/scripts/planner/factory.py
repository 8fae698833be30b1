"""
Build the immutable planning stack (models, lattice, planner, budgets) from a validated scenario.
"""

import math
from dataclasses import dataclass
from typing import List, Optional

from scripts.planner.kinematics import ArmModel, WorldModel
from scripts.planner.lattice import GoalRegion, Lattice, LatticeParams, State
from scripts.planner.preprocessor import (
    CoverageMap,
    Preprocessor,
    RootPath,
    bounded_budget_for,
    calibrate_expansion_cost,
)
from scripts.planner.query_engine import QueryEngine
from scripts.planner.search import BudgetPurpose, Planner, SearchBudget, SearchParams
from utils.config_loader import ScenarioConfig
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class PlanningStack:
    config: ScenarioConfig
    arm: ArmModel
    world: WorldModel
    region: GoalRegion
    lattice: Lattice
    planner: Planner
    home: State
    root_budget: SearchBudget
    bounded_budget: SearchBudget
    seconds_per_expansion: float

    @property
    def cutoff_disc(self) -> int:
        return self.lattice.params.cutoff_disc

    def preprocessor(self, enable_latching: Optional[bool] = None) -> Preprocessor:
        pre = self.config.preprocess
        return Preprocessor(
            self.lattice,
            self.planner,
            self.home,
            self.cutoff_disc,
            self.root_budget,
            self.bounded_budget,
            seed=pre.seed,
            enable_latching=pre.enable_latching if enable_latching is None else enable_latching,
            certify_latches=pre.certify_latches,
        )

    def query_engine(self, coverage: CoverageMap, root_paths: List[RootPath]) -> QueryEngine:
        return QueryEngine(
            self.lattice,
            self.planner,
            coverage,
            root_paths,
            self.home,
            self.bounded_budget,
            self.cutoff_disc,
            self.config.preprocess.time_bound,
        )

    def budget_for(self, seconds: float) -> SearchBudget:
        """Expansion budget matching a wall-time bound under the modeled expansion cost."""
        return bounded_budget_for(seconds, self.config.search.safety_factor, self.seconds_per_expansion)

    def modeled_time(self, expansions: int) -> float:
        return expansions * self.seconds_per_expansion


def build_models(config: ScenarioConfig):
    arm_cfg, world_cfg = config.arm, config.world
    arm = ArmModel(
        link_lengths=tuple(arm_cfg.link_lengths),
        joint_velocity_limits=tuple(arm_cfg.joint_velocity_limits_rad),
        base_position=tuple(arm_cfg.base_position),
        gripper_reach=arm_cfg.gripper_reach,
        link_radius=arm_cfg.link_radius,
        self_collision=arm_cfg.self_collision,
    )
    world = WorldModel(
        conveyor_speed=world_cfg.conveyor_speed,
        belt_x=(world_cfg.belt.x_min, world_cfg.belt.x_max),
        belt_y=(world_cfg.belt.y_min, world_cfg.belt.y_max),
        object_shape=tuple(tuple(p) for p in world_cfg.object_shape),
        static_obstacles=tuple(tuple(tuple(p) for p in poly) for poly in world_cfg.static_obstacles),
    )
    gr = config.preprocess.goal_region
    region = GoalRegion(
        x_exec=gr.x_exec,
        epsilon_p=gr.epsilon_p,
        y_min=gr.y_min,
        y_max=gr.y_max,
        x_resolution=gr.x_resolution,
        y_resolution=gr.y_resolution,
        yaw_resolution=math.radians(gr.yaw_resolution_deg),
    )
    lc = config.lattice
    params = LatticeParams(
        joint_resolution=math.radians(lc.joint_resolution_deg),
        joint_step=math.radians(lc.joint_step_deg),
        time_step=lc.time_step,
        horizon=lc.horizon,
        replan_cutoff=config.preprocess.replan_cutoff,
        trigger_distance=lc.trigger_distance,
        trigger_angle=math.radians(lc.trigger_angle_deg),
        grasp_gain=lc.grasp_gain,
        integration_step=lc.integration_step,
        close_duration=lc.close_duration,
        grasp_timeout=lc.grasp_timeout,
        enclosure_position_tol=lc.enclosure_position_tol,
        enclosure_yaw_tol=math.radians(lc.enclosure_yaw_tol_deg),
        grasp_symmetry=lc.grasp_symmetry,
        collision_angle_step=math.radians(lc.collision_angle_step_deg),
    )
    return arm, world, region, params


def build_stack(config: ScenarioConfig, calibrate: bool = True) -> PlanningStack:
    """
    Assemble the planning stack.

    The bounded budget comes from the config when pinned; otherwise it is
    calibrated on this machine. Calibration only reports when a budget is pinned.
    """
    arm, world, region, params = build_models(config)
    lattice = Lattice(arm, world, region, params)
    sc = config.search
    planner = Planner(
        lattice,
        SearchParams(
            heuristic_lambda=sc.heuristic_lambda,
            angle_weight=sc.angle_weight,
            weight=sc.weight,
            sentinel=sc.heuristic_sentinel,
        ),
    )
    home = lattice.make_state(config.arm.home_configuration_rad, 0)
    root_budget = SearchBudget(sc.root_expansions, BudgetPurpose.ROOT_PATH)

    measured = None
    if calibrate and (sc.bounded_expansions is None or sc.seconds_per_expansion is None):
        measured = calibrate_expansion_cost(planner, home, region.goals()[:: max(1, region.size // 5)], root_budget)
        logger.info("📊 Calibration", seconds_per_expansion=measured)

    cost = sc.seconds_per_expansion or measured or 1e-4
    if sc.bounded_expansions is not None:
        bounded = SearchBudget(sc.bounded_expansions, BudgetPurpose.BOUNDED)
        suggested = bounded_budget_for(config.preprocess.time_bound, sc.safety_factor, cost)
        if bounded.max_expansions > suggested.max_expansions:
            logger.warning(
                "⚠️ Pinned bounded budget exceeds the calibrated one",
                pinned=bounded.max_expansions,
                calibrated=suggested.max_expansions,
            )
    else:
        bounded = bounded_budget_for(config.preprocess.time_bound, sc.safety_factor, cost)

    return PlanningStack(
        config=config,
        arm=arm,
        world=world,
        region=region,
        lattice=lattice,
        planner=planner,
        home=home,
        root_budget=root_budget,
        bounded_budget=bounded,
        seconds_per_expansion=cost,
    )
