#!/usr/bin/env python3
"""
Conveyor planner command line.

Usage:
    python scripts/conveyor_planner.py preprocess --config config/scenario_config.json --out artifacts/default.ctpa
    python scripts/conveyor_planner.py query --artifact artifacts/default.ctpa --state 0:2 --goal -1.6,0.5,30
    python scripts/conveyor_planner.py simulate --artifact artifacts/default.ctpa --strategy e1 --seed 7
    python scripts/conveyor_planner.py benchmark --artifact artifacts/default.ctpa --out reports/benchmark.csv
    python scripts/conveyor_planner.py verify --artifact artifacts/default.ctpa

Exit codes: 0 ok, 1 unexpected error, 2 config error, 3 artifact integrity
error, 4 verification failure.
"""

import argparse
import asyncio
import math
import os
import sys
import time
from pathlib import Path
from typing import List, Optional, Tuple

import orjson

# Add parent directory to path for imports
sys.path.append(os.path.join(os.path.dirname(__file__), ".."))

from config.settings import settings  # noqa: E402
from scripts.planner.errors import CoverageIntegrityError  # noqa: E402
from scripts.planner.factory import PlanningStack, build_stack  # noqa: E402
from scripts.planner.preprocessor import CoverageMap, RootPath  # noqa: E402
from scripts.sim.baselines import BaselineKind, BaselineRunner  # noqa: E402
from scripts.sim.benchmark import run_benchmark  # noqa: E402
from scripts.sim.episode_runner import EpisodeRunner, Strategy  # noqa: E402
from scripts.sim.perception import perception_from_config  # noqa: E402
from utils.artifact_store import ArtifactError, load_artifact, save_artifact  # noqa: E402
from utils.artifact_verifier import verify_artifact  # noqa: E402
from utils.config_loader import (  # noqa: E402
    ConfigError,
    ScenarioConfig,
    adopt_calibration,
    apply_overrides,
    load_config,
    with_calibration,
)
from utils.logger import get_logger, setup_logger  # noqa: E402

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3
EXIT_VERIFY = 4


class UsageError(ConfigError):
    """Malformed command-line value."""


def emit(document) -> None:
    print(orjson.dumps(document, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS).decode())


def _seed(args) -> Optional[int]:
    return args.seed if args.seed is not None else settings.seed


def _workers(args) -> Optional[int]:
    return getattr(args, "workers", None) or settings.workers


def load_scenario(args) -> Tuple[ScenarioConfig, CoverageMap, List[RootPath]]:
    """Artifact plus the config to run it with; the artifact's own config unless --config is given."""
    expected = None
    if args.config:
        expected = apply_overrides(load_config(args.config), benchmark_seed=_seed(args), workers=_workers(args))
    coverage, roots, embedded = load_artifact(args.artifact, expected)
    if expected is None:
        config = apply_overrides(embedded, benchmark_seed=_seed(args), workers=_workers(args))
    else:
        config = adopt_calibration(expected, embedded)
    return config, coverage, roots


def parse_state(text: str) -> Tuple[int, int]:
    try:
        root_id, index = text.split(":")
        return int(root_id), int(index)
    except ValueError as e:
        raise UsageError(f"--state must be root_id:index, got {text!r}") from e


def parse_goal(text: str) -> Tuple[float, float, float]:
    try:
        x, y, yaw_deg = (float(v) for v in text.split(","))
    except ValueError as e:
        raise UsageError(f"--goal must be x,y,yaw_deg, got {text!r}") from e
    return x, y, math.radians(yaw_deg)


def _path_summary(stack: PlanningStack, path) -> Optional[dict]:
    if path is None:
        return None
    return {
        "states": len(path.states),
        "duration_s": path.duration(stack.lattice.params.time_step),
        "start": [list(path.start.q_disc), path.start.t_disc],
        "end": [list(path.end.q_disc), path.end.t_disc],
        "goal": list(path.goal),
        "terminal_grasp": path.terminal_grasp,
        "valid": path.validate(stack.lattice),
    }


# ---------------------------------------------------------------------- commands


def cmd_preprocess(args) -> int:
    config = apply_overrides(
        load_config(args.config),
        preprocess_seed=_seed(args),
        enable_latching=False if args.no_latching else None,
    )
    start = time.perf_counter()
    stack = build_stack(config)
    stack.config = with_calibration(config, stack.bounded_budget.max_expansions, stack.seconds_per_expansion)
    result = stack.preprocessor().run()

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    size = save_artifact(out, result.coverage, result.root_paths, stack.config)
    goals = stack.region.size
    k = len(result.root_paths)
    emit(
        {
            "root_paths": k,
            "goals": goals,
            "root_path_ratio": k / goals if goals else 0.0,
            "coverage_pct": 100.0 * len(result.covered) / goals if goals else 0.0,
            "unreachable": len(result.unreachable),
            "entries": len(result.coverage.entries),
            "latch_entries": len(result.coverage.latch_entries),
            "straw_man_log10_paths": config.replan_steps * math.log10(goals) if goals else 0.0,
            "bounded_expansions": stack.bounded_budget.max_expansions,
            "artifact_bytes": size,
            "elapsed_s": round(time.perf_counter() - start, 3),
        }
    )
    return EXIT_OK


def cmd_query(args) -> int:
    config, coverage, roots = load_scenario(args)
    stack = build_stack(config, calibrate=False)
    engine = stack.query_engine(coverage, roots)
    goal, clamped = stack.region.snap(*parse_goal(args.goal))

    if args.state is None:
        path, stats = engine.plan_from_home(goal)
    else:
        root_id, index = parse_state(args.state)
        by_id = {r.id: r for r in roots}
        if root_id not in by_id or not 0 <= index < len(by_id[root_id].states):
            raise UsageError(f"--state {args.state} does not name a stored root path state")
        root = by_id[root_id]
        path, stats = engine.query(goal, root.path, root.states[index])

    emit(
        {
            "goal": list(goal),
            "goal_clamped": clamped,
            "stats": stats.to_record(),
            "modeled_time_s": stack.modeled_time(stats.plan_expansions),
            "path": _path_summary(stack, path),
        }
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    config, coverage, roots = load_scenario(args)
    stack = build_stack(config, calibrate=False)
    perception = perception_from_config(config.perception, stack.region.epsilon_p)
    seed = config.benchmark.seed

    if args.method == "ours":
        episode = EpisodeRunner(stack, perception, coverage, roots).run_episode(Strategy(args.strategy), seed)
    else:
        budget = args.budget if args.budget is not None else config.preprocess.time_bound
        episode = BaselineRunner(stack, perception).run_baseline(BaselineKind(args.method), seed, budget)
    logger.info("✅ Episode finished", method=episode.method, seed=seed, outcome=episode.outcome.value)
    emit(episode.to_record())
    return EXIT_OK


def cmd_benchmark(args) -> int:
    config, _, _ = load_scenario(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    asyncio.run(
        run_benchmark(
            config,
            args.artifact,
            out,
            trace_path=out.with_suffix(".jsonl"),
            summary_path=out.with_suffix(".json"),
            workers=_workers(args),
        )
    )
    return EXIT_OK


def cmd_verify(args) -> int:
    config, coverage, roots = load_scenario(args)
    stack = build_stack(config, calibrate=False)
    report = verify_artifact(stack, coverage, roots, seed=_seed(args))
    summary = report.to_dict()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_bytes(orjson.dumps(summary, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
    emit(summary)
    return EXIT_OK if report.ok else EXIT_VERIFY


# ---------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Constant-time motion planning for conveyor pickups")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, artifact: bool = True, config_required: bool = False):
        p.add_argument("--config", required=config_required, help="Scenario JSON (default: config embedded in the artifact)")
        if artifact:
            p.add_argument("--artifact", required=True, help="Preprocessed artifact file")
        p.add_argument("--seed", type=int, default=None, help="Overrides the scenario seed (and CONVEYOR_SEED)")

    p = sub.add_parser("preprocess", help="Build the coverage map and write an artifact")
    common(p, artifact=False, config_required=True)
    p.add_argument("--out", required=True, help="Artifact output path")
    p.add_argument("--no-latching", action="store_true", help="Disable latching onto home root paths")
    p.set_defaults(handler=cmd_preprocess)

    p = sub.add_parser("query", help="Run one replanning query")
    common(p)
    p.add_argument("--state", default=None, help="root_id:index of the start state (default: plan from home)")
    p.add_argument("--goal", required=True, help="Object pose at t=0 as x,y,yaw_deg")
    p.set_defaults(handler=cmd_query)

    p = sub.add_parser("simulate", help="Simulate one episode and print its trace")
    common(p)
    p.add_argument("--method", choices=["ours", "wastar", "rrt"], default="ours")
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=Strategy.REPLAN_ALWAYS.value)
    p.add_argument("--budget", type=float, default=None, help="Baseline time budget in seconds")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("benchmark", help="Run the strategy/baseline comparison")
    common(p)
    p.add_argument("--out", default="reports/benchmark.csv", help="CSV report path")
    p.add_argument("--workers", type=int, default=None, help="Worker processes (and CONVEYOR_WORKERS)")
    p.set_defaults(handler=cmd_benchmark)

    p = sub.add_parser("verify", help="Integrity suite for an artifact")
    common(p)
    p.add_argument("--out", default=None, help="Optional JSON summary path")
    p.set_defaults(handler=cmd_verify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logger("conveyor_planner", log_file="conveyor_planner.log")
    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error("❌ Config error", command=args.command, error=str(e))
        return EXIT_CONFIG
    except (ArtifactError, CoverageIntegrityError) as e:
        logger.error("❌ Artifact integrity error", command=args.command, error=str(e), kind=type(e).__name__)
        return EXIT_ARTIFACT
    except Exception as e:
        logger.exception("❌ Unexpected error", command=args.command, error=str(e))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
