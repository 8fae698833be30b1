"""
Shared fixtures: the tiny scenario, its planning stack and a preprocessed
artifact built once per session.
"""

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from config.settings import settings  # noqa: E402
from scripts.planner.factory import build_stack  # noqa: E402
from utils.artifact_store import save_artifact  # noqa: E402
from utils.config_loader import config_from_dict, config_to_dict, load_config  # noqa: E402

TINY_CONFIG = ROOT / "config" / "tiny_scenario.json"
DEFAULT_CONFIG = ROOT / "config" / "scenario_config.json"


@pytest.fixture(scope="session")
def tiny_config():
    return load_config(TINY_CONFIG)


@pytest.fixture(scope="session")
def tiny_stack(tiny_config):
    return build_stack(tiny_config, calibrate=False)


@pytest.fixture(scope="session")
def tiny_preprocessed(tiny_stack):
    return tiny_stack.preprocessor().run()


@pytest.fixture(scope="session")
def tiny_artifact(tmp_path_factory, tiny_config, tiny_preprocessed):
    path = tmp_path_factory.mktemp("artifacts") / "tiny.ctpa"
    save_artifact(path, tiny_preprocessed.coverage, tiny_preprocessed.root_paths, tiny_config)
    return path


@pytest.fixture
def tiny_config_dict(tiny_config):
    return config_to_dict(tiny_config)


def make_config(base, **sections):
    """Copy of ``base`` with nested section fields replaced, e.g. make_config(cfg, world={"static_obstacles": []})."""
    raw = config_to_dict(base)
    for section, values in sections.items():
        if isinstance(values, dict) and isinstance(raw.get(section), dict):
            raw[section].update(values)
        else:
            raw[section] = values
    return config_from_dict(raw, source="test")


@pytest.fixture
def config_factory():
    return make_config


@pytest.fixture(autouse=True)
def _log_dir(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "log_dir", str(tmp_path / "logs"))


@pytest.fixture(scope="session")
def tight_config(tiny_config):
    """Tiny scenario where a bounded search, wA* or RRT affords a single expansion or iteration."""
    return make_config(
        tiny_config,
        search={"bounded_expansions": 1, "seconds_per_expansion": 0.1},
        benchmark={"rrt": {"seconds_per_iteration": 0.1}},
    )


@pytest.fixture(scope="session")
def tight_stack(tight_config):
    return build_stack(tight_config, calibrate=False)


@pytest.fixture(scope="session")
def tight_preprocessed(tight_stack):
    return tight_stack.preprocessor(enable_latching=True).run()
