"""
Scenario configuration: pydantic schema, loading and hashing.

The scenario file is JSON. Angles are given in degrees in the file and exposed
in radians through the ``*_rad`` helpers; the planner never sees degrees.
"""

import hashlib
import math
from pathlib import Path
from typing import List, Optional, Tuple, Union

import orjson
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from utils.logger import get_logger

logger = get_logger(__name__)

Point = Tuple[float, float]

GRID_TOL = 1e-9


class ConfigError(Exception):
    """Raised when a scenario file cannot be read or fails validation."""


def _is_multiple(value: float, step: float) -> bool:
    ratio = value / step
    return abs(ratio - round(ratio)) < 1e-6


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ArmConfig(_Section):
    link_lengths: List[float]
    joint_velocity_limits_deg: List[float]
    base_position: Point = (0.0, 0.0)
    gripper_reach: float = 0.08
    link_radius: float = 0.02
    home_configuration_deg: List[float]
    self_collision: bool = False

    @model_validator(mode="after")
    def _check_arm(self) -> "ArmConfig":
        n = len(self.link_lengths)
        if n < 2:
            raise ValueError("arm needs at least 2 links")
        if len(self.joint_velocity_limits_deg) != n or len(self.home_configuration_deg) != n:
            raise ValueError("link_lengths, joint_velocity_limits_deg and home_configuration_deg must have equal length")
        if any(length <= 0 for length in self.link_lengths):
            raise ValueError("link lengths must be positive")
        if any(v <= 0 for v in self.joint_velocity_limits_deg):
            raise ValueError("joint velocity limits must be positive")
        if self.link_radius <= 0 or self.gripper_reach <= 0:
            raise ValueError("link_radius and gripper_reach must be positive")
        if self.gripper_reach >= self.link_lengths[-1]:
            raise ValueError("gripper_reach must be shorter than the last link")
        return self

    @property
    def joint_velocity_limits_rad(self) -> List[float]:
        return [math.radians(v) for v in self.joint_velocity_limits_deg]

    @property
    def home_configuration_rad(self) -> List[float]:
        return [math.radians(q) for q in self.home_configuration_deg]


class BeltConfig(_Section):
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    @model_validator(mode="after")
    def _check_belt(self) -> "BeltConfig":
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError("belt extents must be non-empty")
        return self


class WorldConfig(_Section):
    conveyor_speed: float = Field(gt=0)
    belt: BeltConfig
    static_obstacles: List[List[Point]] = Field(default_factory=list)
    object_shape: List[Point]

    @model_validator(mode="after")
    def _check_shapes(self) -> "WorldConfig":
        if len(self.object_shape) < 3:
            raise ValueError("object_shape needs at least 3 vertices")
        for poly in self.static_obstacles:
            if len(poly) < 3:
                raise ValueError("static obstacle polygons need at least 3 vertices")
        return self


class LatticeConfig(_Section):
    joint_resolution_deg: float = Field(default=2.0, gt=0)
    joint_step_deg: float = Field(default=20.0, gt=0)
    time_step: float = Field(default=0.5, gt=0)
    horizon: float = Field(default=12.0, gt=0)
    trigger_distance: float = Field(default=0.15, gt=0)
    trigger_angle_deg: float = Field(default=45.0, gt=0)
    grasp_gain: float = Field(default=2.0, gt=0)
    integration_step: float = Field(default=0.05, gt=0)
    close_duration: float = Field(default=0.5, gt=0)
    grasp_timeout: float = Field(default=3.0, gt=0)
    enclosure_position_tol: float = Field(default=0.01, gt=0)
    enclosure_yaw_tol_deg: float = Field(default=10.0, gt=0)
    grasp_symmetry: int = Field(default=2, ge=1)
    collision_angle_step_deg: float = Field(default=5.0, gt=0)

    @model_validator(mode="after")
    def _check_grid(self) -> "LatticeConfig":
        if not _is_multiple(360.0, self.joint_resolution_deg):
            raise ValueError("joint_resolution_deg must divide 360")
        if not _is_multiple(self.joint_step_deg, self.joint_resolution_deg):
            raise ValueError("joint_step_deg must be a multiple of joint_resolution_deg")
        if self.integration_step > self.time_step:
            raise ValueError("integration_step must not exceed time_step")
        return self


class SearchConfig(_Section):
    heuristic_lambda: float = Field(default=1.0, ge=0)
    angle_weight: float = Field(default=1.0, ge=0)
    weight: float = Field(default=50.0, ge=1)
    root_expansions: int = Field(default=20000, gt=0)
    bounded_expansions: Optional[int] = Field(default=None, gt=0)
    safety_factor: float = Field(default=0.5, gt=0, le=1)
    seconds_per_expansion: Optional[float] = Field(default=None, gt=0)
    heuristic_sentinel: float = Field(default=1.0e6, gt=0)


class GoalRegionConfig(_Section):
    x_exec: float
    epsilon_p: float = Field(default=0.025, gt=0)
    y_min: float
    y_max: float
    x_resolution: float = Field(default=0.01, gt=0)
    y_resolution: float = Field(default=0.01, gt=0)
    yaw_resolution_deg: float = Field(default=10.0, gt=0)

    @model_validator(mode="after")
    def _check_region(self) -> "GoalRegionConfig":
        if self.y_max < self.y_min:
            raise ValueError("goal region y_max < y_min")
        if not _is_multiple(4 * self.epsilon_p, self.x_resolution):
            raise ValueError("4*epsilon_p must be a multiple of x_resolution")
        if not _is_multiple(self.y_max - self.y_min, self.y_resolution):
            raise ValueError("goal region y extent must be a multiple of y_resolution")
        if not _is_multiple(360.0, self.yaw_resolution_deg):
            raise ValueError("yaw_resolution_deg must divide 360")
        return self


class PreprocessConfig(_Section):
    replan_cutoff: float = Field(default=3.5, ge=0)
    time_bound: float = Field(default=0.2, gt=0)
    seed: int = 0
    enable_latching: bool = True
    certify_latches: bool = True
    goal_region: GoalRegionConfig


class PerceptionConfig(_Section):
    camera_position: Point
    far_distance: float = Field(gt=0)
    near_distance: float = Field(gt=0)
    error_far: float = Field(ge=0)
    error_near: float = Field(ge=0)
    yaw_error_far_deg: float = Field(default=20.0, ge=0)
    yaw_error_near_deg: float = Field(default=2.0, ge=0)
    update_period: float = Field(default=0.5, gt=0)
    accuracy_distance: float = Field(default=1.0, gt=0)
    pickup_tolerance: float = Field(default=0.008, gt=0)
    pickup_yaw_tolerance_deg: float = Field(default=15.0, gt=0)

    @model_validator(mode="after")
    def _check_schedule(self) -> "PerceptionConfig":
        if self.near_distance >= self.far_distance:
            raise ValueError("near_distance must be below far_distance")
        if self.error_near > self.error_far:
            raise ValueError("error must not grow as the object approaches")
        return self


class RRTConfig(_Section):
    goal_bias: float = Field(default=0.3, ge=0, le=1)
    seconds_per_iteration: float = Field(default=0.0004, gt=0)
    pregrasp_samples: int = Field(default=12, gt=0)


class BenchmarkConfig(_Section):
    episodes: int = Field(default=100, ge=0)
    seed: int = 0
    strategies: List[str] = Field(default_factory=lambda: ["e1", "e2", "e3"])
    baselines: List[str] = Field(default_factory=lambda: ["wastar", "rrt"])
    budgets: List[float] = Field(default_factory=lambda: [0.2, 0.5, 1.0])
    workers: int = Field(default=1, ge=1)
    oracle_max_goals: int = Field(default=250, ge=0)
    verify_samples: int = Field(default=100, ge=0)
    verify_queries: int = Field(default=1000, ge=0)
    rrt: RRTConfig = Field(default_factory=RRTConfig)

    @model_validator(mode="after")
    def _check_methods(self) -> "BenchmarkConfig":
        unknown = set(self.strategies) - {"e1", "e2", "e3"}
        unknown |= set(self.baselines) - {"wastar", "rrt"}
        if unknown:
            raise ValueError(f"unknown strategies/baselines: {sorted(unknown)}")
        if any(b <= 0 for b in self.budgets):
            raise ValueError("budgets must be positive")
        return self


class ScenarioConfig(_Section):
    name: str = "scenario"
    arm: ArmConfig
    world: WorldConfig
    lattice: LatticeConfig = Field(default_factory=LatticeConfig)
    search: SearchConfig = Field(default_factory=SearchConfig)
    preprocess: PreprocessConfig
    perception: PerceptionConfig
    benchmark: BenchmarkConfig = Field(default_factory=BenchmarkConfig)

    @model_validator(mode="after")
    def _check_cross(self) -> "ScenarioConfig":
        dt = self.lattice.time_step
        if not _is_multiple(self.preprocess.replan_cutoff, dt):
            raise ValueError("preprocess.replan_cutoff must be a multiple of lattice.time_step")
        if self.preprocess.time_bound >= dt:
            raise ValueError("preprocess.time_bound must be below lattice.time_step")
        if self.perception.error_far > self.preprocess.goal_region.epsilon_p:
            raise ValueError("perception.error_far exceeds goal_region.epsilon_p")
        if self.preprocess.replan_cutoff >= self.lattice.horizon:
            raise ValueError("lattice.horizon must extend past the replan cutoff")
        return self

    @property
    def replan_steps(self) -> int:
        """Number of δ_t steps up to the replan cutoff (ℓ)."""
        return int(round(self.preprocess.replan_cutoff / self.lattice.time_step))


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    """
    Load and validate a scenario file.

    Args:
        path: Path to the JSON scenario

    Returns:
        Validated ScenarioConfig

    Raises:
        ConfigError: unreadable file, malformed JSON or schema violation
    """
    path = Path(path)
    try:
        raw = orjson.loads(path.read_bytes())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except orjson.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {path}: {e}") from e
    return config_from_dict(raw, source=str(path))


def config_from_dict(raw: dict, source: str = "<dict>") -> ScenarioConfig:
    try:
        config = ScenarioConfig.model_validate(raw)
    except ValidationError as e:
        fields = ", ".join(".".join(str(p) for p in err["loc"]) or "<root>" for err in e.errors())
        raise ConfigError(f"invalid config {source}: {fields}: {e}") from e
    logger.debug("config loaded", source=source, name=config.name, config_hash=config_hash(config))
    return config


def config_to_dict(config: ScenarioConfig) -> dict:
    return config.model_dump(mode="json")


ARTIFACT_SECTIONS = ("arm", "world", "lattice", "search", "preprocess")


def config_hash(config: ScenarioConfig) -> bytes:
    """sha256 over the sorted-key JSON encoding of the sections that shape an artifact."""
    raw = config_to_dict(config)
    payload = orjson.dumps({k: raw[k] for k in ARTIFACT_SECTIONS}, option=orjson.OPT_SORT_KEYS)
    return hashlib.sha256(payload).digest()


def apply_overrides(
    config: ScenarioConfig,
    preprocess_seed: Optional[int] = None,
    benchmark_seed: Optional[int] = None,
    workers: Optional[int] = None,
    enable_latching: Optional[bool] = None,
) -> ScenarioConfig:
    """Return a copy with CLI/environment overrides applied and re-validated."""
    raw = config_to_dict(config)
    if preprocess_seed is not None:
        raw["preprocess"]["seed"] = preprocess_seed
    if benchmark_seed is not None:
        raw["benchmark"]["seed"] = benchmark_seed
    if workers is not None:
        raw["benchmark"]["workers"] = workers
    if enable_latching is not None:
        raw["preprocess"]["enable_latching"] = enable_latching
    return config_from_dict(raw, source="overrides")


def with_calibration(config: ScenarioConfig, bounded_expansions: int, seconds_per_expansion: float) -> ScenarioConfig:
    """Pin the resolved bounded budget and expansion cost into the search section."""
    search = config.search.model_copy(
        update={"bounded_expansions": bounded_expansions, "seconds_per_expansion": seconds_per_expansion}
    )
    return config.model_copy(update={"search": search})


def adopt_calibration(config: ScenarioConfig, resolved: ScenarioConfig) -> ScenarioConfig:
    """Fill budget fields left unpinned in ``config`` from an already resolved config."""
    search = config.search
    bounded = search.bounded_expansions
    cost = search.seconds_per_expansion
    if bounded is not None and cost is not None:
        return config
    return with_calibration(
        config,
        bounded if bounded is not None else resolved.search.bounded_expansions,
        cost if cost is not None else resolved.search.seconds_per_expansion,
    )
