"""
Seeded batch comparison of the replanning strategies and the baselines.

Every (method, budget) cell runs the same episode seeds. Episodes are
independent and fan out over an executor; results are gathered in seed
order so the CSV only depends on the config and the artifact.
"""

import asyncio
import csv
import io
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from statistics import fmean
from typing import Dict, List, Optional, Sequence, Union

import orjson

from scripts.planner.factory import build_stack
from scripts.planner.preprocessor import CoverageMap, RootPath
from scripts.sim.baselines import BaselineKind, BaselineRunner
from scripts.sim.episode_runner import EpisodeRunner, Outcome, Strategy
from scripts.sim.perception import perception_from_config
from utils.artifact_store import load_artifact
from utils.config_loader import ScenarioConfig, adopt_calibration, config_from_dict, config_to_dict
from utils.logger import get_logger

logger = get_logger(__name__)

CSV_HEADER = [
    "method",
    "budget_s",
    "pickup_pct",
    "plan_success_pct",
    "mean_plan_time_s",
    "max_lookups",
    "mean_cycles",
    "mean_cost_s",
]

UNCHANGED = "unchanged"


@dataclass(frozen=True)
class Cell:
    method: str
    budget_s: float


@dataclass
class CellSummary:
    method: str
    budget_s: float
    episodes: int
    pickup_pct: float
    plan_success_pct: float
    episode_plan_success_pct: float
    mean_plan_time_s: float
    max_plan_time_s: float
    max_lookups: int
    max_expansions: int
    mean_expansions: float
    mean_cycles: float
    mean_cost_s: float
    pickup_pct_accurate: Optional[float]
    pickup_pct_inaccurate: Optional[float]
    replanned_after_mark_pct: float

    def csv_row(self) -> List[str]:
        return [
            self.method,
            f"{self.budget_s:.3f}",
            f"{self.pickup_pct:.2f}",
            f"{self.plan_success_pct:.2f}",
            f"{self.mean_plan_time_s:.4f}",
            str(self.max_lookups),
            f"{self.mean_cycles:.2f}",
            f"{self.mean_cost_s:.2f}",
        ]


def _pct(part: int, whole: int) -> float:
    return 100.0 * part / whole if whole else 0.0


def summarize(cell: Cell, records: Sequence[dict]) -> CellSummary:
    """Aggregate per-episode records of one cell; planning success is reported per query and per episode."""
    n = len(records)
    events = [e for r in records for e in r["events"]]
    planned = [e for e in events if e["outcome"] != UNCHANGED]
    per_episode = [r["planning_successes"] / r["planning_cycles"] for r in records if r["planning_cycles"]]
    costs = [r["path_cost"] for r in records if r["path_cost"] is not None]
    success = [r["outcome"] == Outcome.PICKUP_SUCCESS.value for r in records]
    accurate = [s for s, r in zip(success, records) if r["accurate_perception"]]
    inaccurate = [s for s, r in zip(success, records) if not r["accurate_perception"]]
    return CellSummary(
        method=cell.method,
        budget_s=cell.budget_s,
        episodes=n,
        pickup_pct=_pct(sum(success), n),
        plan_success_pct=_pct(sum(1 for e in planned if e["success"]), len(planned)),
        episode_plan_success_pct=100.0 * fmean(per_episode) if per_episode else 0.0,
        mean_plan_time_s=fmean(e["modeled_time"] for e in planned) if planned else 0.0,
        max_plan_time_s=max((e["modeled_time"] for e in planned), default=0.0),
        max_lookups=max((e["map_lookups"] for e in events), default=0),
        max_expansions=max((e["expansions"] for e in planned), default=0),
        mean_expansions=fmean(e["expansions"] for e in planned) if planned else 0.0,
        mean_cycles=fmean(r["planning_cycles"] for r in records) if records else 0.0,
        mean_cost_s=fmean(costs) if costs else 0.0,
        pickup_pct_accurate=_pct(sum(accurate), len(accurate)) if accurate else None,
        pickup_pct_inaccurate=_pct(sum(inaccurate), len(inaccurate)) if inaccurate else None,
        replanned_after_mark_pct=_pct(sum(1 for r in records if r["replanned_after_mark"]), n),
    )


def benchmark_cells(config: ScenarioConfig) -> List[Cell]:
    bench = config.benchmark
    cells = [Cell(f"ours-{s}", config.preprocess.time_bound) for s in bench.strategies]
    cells += [Cell(kind, budget) for kind in bench.baselines for budget in bench.budgets]
    return cells


def render_csv(summaries: Sequence[CellSummary]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for summary in summaries:
        writer.writerow(summary.csv_row())
    return buffer.getvalue()


class SimulationContext:
    """Runners for one loaded artifact; one per worker process."""

    def __init__(self, config: ScenarioConfig, coverage: CoverageMap, root_paths: List[RootPath]):
        stack = build_stack(config, calibrate=False)
        perception = perception_from_config(config.perception, stack.region.epsilon_p)
        self.episodes = EpisodeRunner(stack, perception, coverage, root_paths)
        self.baselines = BaselineRunner(stack, perception)

    def run(self, cell: Cell, seed: int) -> dict:
        if cell.method.startswith("ours-"):
            episode = self.episodes.run_episode(Strategy(cell.method[len("ours-"):]), seed)
        else:
            episode = self.baselines.run_baseline(BaselineKind(cell.method), seed, cell.budget_s)
        return episode.to_record()


_CONTEXTS: Dict[str, SimulationContext] = {}


def _install_context(context: SimulationContext) -> None:
    _CONTEXTS["active"] = context


def _init_worker(config_dict: dict, artifact_path: str) -> None:
    config = config_from_dict(config_dict, source="worker")
    coverage, roots, _ = load_artifact(artifact_path, config)
    _install_context(SimulationContext(config, coverage, roots))


def _run_one(cell: Cell, seed: int) -> dict:
    return _CONTEXTS["active"].run(cell, seed)


async def run_benchmark(
    config: ScenarioConfig,
    artifact_path: Union[str, Path],
    out_csv: Union[str, Path],
    trace_path: Optional[Union[str, Path]] = None,
    summary_path: Optional[Union[str, Path]] = None,
    workers: Optional[int] = None,
) -> List[CellSummary]:
    """
    Run every cell for ``config.benchmark.episodes`` seeds and write the reports.

    Args:
        config: Scenario; its artifact sections must match the artifact
        artifact_path: Preprocessed artifact
        out_csv: Table with the fixed header
        trace_path: Optional JSON-lines file with one record per episode
        summary_path: Optional JSON file with the full cell summaries
        workers: Overrides config.benchmark.workers
    """
    coverage, roots, artifact_config = load_artifact(artifact_path, config)
    sim_config = adopt_calibration(config, artifact_config)
    bench = sim_config.benchmark
    workers = workers or bench.workers
    seeds = [bench.seed + i for i in range(bench.episodes)]
    cells = benchmark_cells(sim_config)
    jobs = [(cell, seed) for cell in cells for seed in seeds]
    logger.info("🚀 Benchmark started", cells=len(cells), episodes=len(seeds), workers=workers)

    executor: Executor
    if workers > 1:
        executor = ProcessPoolExecutor(
            max_workers=workers,
            initializer=_init_worker,
            initargs=(config_to_dict(sim_config), str(artifact_path)),
        )
    else:
        _install_context(SimulationContext(sim_config, coverage, roots))
        executor = ThreadPoolExecutor(max_workers=1)

    loop = asyncio.get_running_loop()
    with executor:
        records = await asyncio.gather(*(loop.run_in_executor(executor, _run_one, cell, seed) for cell, seed in jobs))

    summaries: List[CellSummary] = []
    # no episodes: header-only table
    for i, cell in enumerate(cells if seeds else []):
        cell_records = records[i * len(seeds):(i + 1) * len(seeds)]
        summary = summarize(cell, cell_records)
        summaries.append(summary)
        logger.info(
            "📊 Benchmark cell",
            method=cell.method,
            budget_s=cell.budget_s,
            pickup_pct=round(summary.pickup_pct, 2),
            plan_success_pct=round(summary.plan_success_pct, 2),
            mean_cycles=round(summary.mean_cycles, 2),
        )

    Path(out_csv).write_text(render_csv(summaries))
    if trace_path is not None:
        with open(trace_path, "wb") as fh:
            for record in records:
                fh.write(orjson.dumps(record, option=orjson.OPT_SORT_KEYS) + b"\n")
    if summary_path is not None:
        Path(summary_path).write_bytes(
            orjson.dumps([asdict(s) for s in summaries], option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2)
        )
    logger.info("✅ Benchmark complete", csv=str(out_csv), cells=len(summaries))
    return summaries
