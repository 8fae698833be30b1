import csv

import orjson
import pytest

from scripts.sim.benchmark import CSV_HEADER, Cell, benchmark_cells, render_csv, run_benchmark, summarize


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_cells_follow_the_config(tiny_config):
    cells = benchmark_cells(tiny_config)
    assert cells == [
        Cell("ours-e1", 0.2),
        Cell("ours-e2", 0.2),
        Cell("ours-e3", 0.2),
        Cell("wastar", 0.2),
        Cell("rrt", 0.2),
    ]


def test_summary_denominators():
    def event(success, outcome="replanned", modeled=0.01):
        return {"success": success, "outcome": outcome, "modeled_time": modeled, "map_lookups": 2, "expansions": 5}

    records = [
        {
            "events": [event(True), event(True, "unchanged", 0.0)],
            "planning_cycles": 1,
            "planning_successes": 1,
            "path_cost": 4.0,
            "outcome": "pickup-success",
            "accurate_perception": True,
            "replanned_after_mark": False,
        },
        {
            "events": [event(True), event(False, "failure-unreachable", 0.03)],
            "planning_cycles": 2,
            "planning_successes": 1,
            "path_cost": None,
            "outcome": "miss",
            "accurate_perception": False,
            "replanned_after_mark": True,
        },
    ]
    s = summarize(Cell("ours-e1", 0.2), records)
    assert s.pickup_pct == pytest.approx(50.0)
    # unchanged confirmations are not planning attempts
    assert s.plan_success_pct == pytest.approx(100.0 * 2 / 3)
    assert s.episode_plan_success_pct == pytest.approx(75.0)
    assert s.mean_plan_time_s == pytest.approx(0.05 / 3)
    assert s.mean_cycles == pytest.approx(1.5)
    assert s.mean_cost_s == pytest.approx(4.0)
    assert s.pickup_pct_accurate == pytest.approx(100.0)
    assert s.pickup_pct_inaccurate == pytest.approx(0.0)
    assert s.csv_row() == ["ours-e1", "0.200", "50.00", "66.67", "0.0167", "2", "1.50", "4.00"]


def test_render_csv_header_only():
    assert render_csv([]) == ",".join(CSV_HEADER) + "\n"


@pytest.mark.asyncio
async def test_zero_episodes_writes_only_the_header(tmp_path, tiny_artifact, tiny_config, config_factory):
    config = config_factory(tiny_config, benchmark={"episodes": 0})
    out = tmp_path / "bench.csv"
    summaries = await run_benchmark(config, tiny_artifact, out)
    assert summaries == []
    assert _rows(out) == [CSV_HEADER]


@pytest.mark.asyncio
async def test_benchmark_is_reproducible(tmp_path, tiny_artifact, tiny_config, config_factory):
    config = config_factory(tiny_config, benchmark={"episodes": 2})
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    trace = tmp_path / "a.jsonl"
    await run_benchmark(config, tiny_artifact, first, trace_path=trace, summary_path=tmp_path / "a.json")
    await run_benchmark(config, tiny_artifact, second)
    assert first.read_bytes() == second.read_bytes()

    rows = _rows(first)
    assert rows[0] == CSV_HEADER
    assert [r[0] for r in rows[1:]] == ["ours-e1", "ours-e2", "ours-e3", "wastar", "rrt"]
    records = [orjson.loads(line) for line in trace.read_bytes().splitlines()]
    assert len(records) == 5 * 2
    assert [r["seed"] for r in records[:2]] == [0, 1]
    assert len(orjson.loads((tmp_path / "a.json").read_bytes())) == 5
