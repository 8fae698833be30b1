"""
Versioned binary container for preprocessed artifacts.

Layout::

    magic    4s   b"CTPA"
    version  H
    config   32s  sha256 of the artifact-shaping config sections
    length   Q    payload byte count
    crc32    I    over the header fields above plus the payload
    payload       orjson document (config, root paths, coverage map)

Any single corrupted byte is rejected; nothing is returned on a failed load.
"""

import struct
import zlib
from pathlib import Path as FsPath
from typing import List, Optional, Tuple, Union

import numpy as np
import orjson

from scripts.planner.lattice import GoalPose, Primitive, PrimitiveKind, State
from scripts.planner.preprocessor import CoverageMap, LatchEntry, RootPath
from scripts.planner.search import Path
from utils.config_loader import (
    ConfigError,
    ScenarioConfig,
    adopt_calibration,
    config_from_dict,
    config_hash,
    config_to_dict,
)
from utils.logger import get_logger

logger = get_logger(__name__)

MAGIC = b"CTPA"
FORMAT_VERSION = 1
_PREFIX = struct.Struct(">4sH32sQ")
_CRC = struct.Struct(">I")
HEADER_SIZE = _PREFIX.size + _CRC.size


class ArtifactError(Exception):
    """Base class for artifact load failures."""


class ArtifactFormatError(ArtifactError):
    pass


class ArtifactVersionError(ArtifactError):
    pass


class ArtifactTruncatedError(ArtifactError):
    pass


class ArtifactCorruptError(ArtifactError):
    pass


class ConfigMismatchError(ArtifactError):
    pass


# ---------------------------------------------------------------------- encode


def _state(s: State) -> list:
    return [list(s.q_disc), s.t_disc]


def _primitive(p: Primitive) -> dict:
    return {
        "kind": p.kind.value,
        "duration": p.duration,
        "joint": p.joint_index,
        "dir": p.direction,
        "target": _state(p.target_state) if p.target_state is not None else None,
    }


def _path(p: Path) -> dict:
    return {
        "states": [_state(s) for s in p.states],
        "primitives": [_primitive(x) for x in p.primitives],
        "goal": list(p.goal),
        "terminal_grasp": p.terminal_grasp,
        "trajectory": p.grasp_trajectory.tolist() if p.grasp_trajectory is not None else None,
    }


def _root(r: RootPath) -> dict:
    return {
        "id": r.id,
        "origin": _state(r.origin_state),
        "covered": sorted(r.covered_goals),
        "certificates": [[sk, sorted(goals)] for sk, goals in sorted(r.certificates.items())],
        "path": _path(r.path),
    }


def _coverage(m: CoverageMap) -> dict:
    return {
        "entries": [[sk, gk, rid] for (sk, gk), rid in sorted(m.entries.items())],
        "latch_entries": [
            [sk, rid, e.target_key, sorted(e.goals)] for (sk, rid), e in sorted(m.latch_entries.items())
        ],
        "home_paths": list(m.home_paths),
        "unreachable": [[sk, sorted(goals)] for sk, goals in sorted(m.unreachable.items())],
    }


def serialize(coverage: CoverageMap, root_paths: List[RootPath], config: ScenarioConfig) -> bytes:
    """Encode a coverage map, its root paths and the config into one artifact blob."""
    document = {
        "config": config_to_dict(config),
        "root_paths": [_root(r) for r in sorted(root_paths, key=lambda r: r.id)],
        "coverage": _coverage(coverage),
    }
    payload = orjson.dumps(document, option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY)
    prefix = _PREFIX.pack(MAGIC, FORMAT_VERSION, config_hash(config), len(payload))
    crc = zlib.crc32(prefix + payload) & 0xFFFFFFFF
    return prefix + _CRC.pack(crc) + payload


# ---------------------------------------------------------------------- decode


def _to_state(raw) -> State:
    return State(tuple(int(v) for v in raw[0]), int(raw[1]))


def _to_primitive(raw: dict) -> Primitive:
    return Primitive(
        kind=PrimitiveKind(raw["kind"]),
        duration=float(raw["duration"]),
        joint_index=raw["joint"],
        direction=int(raw["dir"]),
        target_state=_to_state(raw["target"]) if raw["target"] is not None else None,
    )


def _to_path(raw: dict) -> Path:
    traj = raw["trajectory"]
    return Path(
        states=[_to_state(s) for s in raw["states"]],
        primitives=[_to_primitive(p) for p in raw["primitives"]],
        goal=GoalPose(*(int(v) for v in raw["goal"])),
        terminal_grasp=bool(raw["terminal_grasp"]),
        grasp_trajectory=np.asarray(traj, dtype=float) if traj is not None else None,
    )


def _to_root(raw: dict) -> RootPath:
    return RootPath(
        id=int(raw["id"]),
        path=_to_path(raw["path"]),
        covered_goals={int(g) for g in raw["covered"]},
        origin_state=_to_state(raw["origin"]),
        certificates={int(sk): {int(g) for g in goals} for sk, goals in raw["certificates"]},
    )


def _to_coverage(raw: dict) -> CoverageMap:
    return CoverageMap(
        entries={(int(sk), int(gk)): int(rid) for sk, gk, rid in raw["entries"]},
        latch_entries={
            (int(sk), int(rid)): LatchEntry(int(target), frozenset(int(g) for g in goals))
            for sk, rid, target, goals in raw["latch_entries"]
        },
        home_paths=[int(h) for h in raw["home_paths"]],
        unreachable={int(sk): {int(g) for g in goals} for sk, goals in raw["unreachable"]},
    )


def deserialize(
    data: bytes, expected_config: Optional[ScenarioConfig] = None
) -> Tuple[CoverageMap, List[RootPath], ScenarioConfig]:
    """
    Decode an artifact blob.

    Args:
        data: Artifact bytes
        expected_config: When given, the artifact must have been built from it

    Returns:
        (coverage map, root paths ordered by id, embedded config)

    Raises:
        ArtifactError subclass on any format, version, integrity or config problem
    """
    if len(data) < HEADER_SIZE:
        raise ArtifactTruncatedError(f"artifact shorter than its header ({len(data)} bytes)")
    magic, version, stored_hash, length = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise ArtifactFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ArtifactVersionError(f"artifact version {version}, expected {FORMAT_VERSION}")
    (crc,) = _CRC.unpack_from(data, _PREFIX.size)
    end = HEADER_SIZE + length
    if len(data) < end:
        raise ArtifactTruncatedError(f"payload truncated: {len(data) - HEADER_SIZE} of {length} bytes")
    if len(data) > end:
        raise ArtifactCorruptError(f"{len(data) - end} trailing bytes after payload")
    payload = data[HEADER_SIZE:end]
    if zlib.crc32(data[: _PREFIX.size] + payload) & 0xFFFFFFFF != crc:
        raise ArtifactCorruptError("checksum mismatch")

    try:
        document = orjson.loads(payload)
        config = config_from_dict(document["config"], source="artifact")
        coverage = _to_coverage(document["coverage"])
        roots = [_to_root(r) for r in document["root_paths"]]
    except (orjson.JSONDecodeError, ConfigError, KeyError, TypeError, ValueError) as e:
        raise ArtifactCorruptError(f"undecodable payload: {e}") from e

    if config_hash(config) != stored_hash:
        raise ArtifactCorruptError("embedded config does not match the header hash")
    if expected_config is not None and config_hash(adopt_calibration(expected_config, config)) != stored_hash:
        raise ConfigMismatchError("artifact was built from a different config")

    ids = {r.id for r in roots}
    dangling = {rid for rid in coverage.entries.values()} | {rid for _, rid in coverage.latch_entries}
    dangling |= set(coverage.home_paths)
    if not dangling <= ids:
        raise ArtifactCorruptError(f"coverage references unknown root paths {sorted(dangling - ids)[:5]}")
    return coverage, roots, config


def save_artifact(path: Union[str, FsPath], coverage: CoverageMap, root_paths: List[RootPath], config: ScenarioConfig) -> int:
    blob = serialize(coverage, root_paths, config)
    FsPath(path).write_bytes(blob)
    logger.info("💾 Artifact written", path=str(path), size_bytes=len(blob), root_paths=len(root_paths))
    return len(blob)


def load_artifact(
    path: Union[str, FsPath], expected_config: Optional[ScenarioConfig] = None
) -> Tuple[CoverageMap, List[RootPath], ScenarioConfig]:
    try:
        data = FsPath(path).read_bytes()
    except OSError as e:
        raise ArtifactFormatError(f"cannot read artifact {path}: {e}") from e
    return deserialize(data, expected_config)
