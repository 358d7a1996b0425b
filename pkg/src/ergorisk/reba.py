"""REBA scoring: angle bands, Group A/B/C lookups and the 8-class label.

Tables and bands are data (``data/reba_default.json``), transcribed from
Hignett & McAtamney (2000). Load, force, coupling and activity modifiers
are fixed at zero, so group scores come straight from the lookups.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, DomainError, MissingLandmarkError, SampleRejected
from .geometry import GeometryConfig, RegionAngles, region_angles
from .pose_io import DEFAULT_VISIBILITY, Skeleton, filter_visibility, parse_landmark_file

REGIONS = ("neck", "trunk", "leg", "upper_arm", "lower_arm", "wrist")
REGION_DOMAINS = {
    "trunk": (1, 4),
    "neck": (1, 2),
    "leg": (1, 3),
    "upper_arm": (1, 4),
    "lower_arm": (1, 2),
    "wrist": (1, 2),
}
TABLE_SHAPES = {"table_a": (5, 3, 4), "table_b": (6, 2, 3), "table_c": (12, 12)}
TABLE_RANGES = {"table_a": (1, 9), "table_b": (1, 9), "table_c": (1, 12)}
N_CLASSES = 8
MAX_ANGLE = 180.0


@dataclass(frozen=True)
class ScoreThresholds:
    """Angle bands per region: ``(lo, hi, score)``, lower-inclusive.

    The last band of a region also includes ``hi`` (180 degrees).
    """

    bands: dict[str, tuple[tuple[float, float, int], ...]]

    def __post_init__(self):
        for region in REGIONS:
            if region not in self.bands:
                raise ConfigError(f"thresholds: no bands for region {region!r}")
        for region, bands in self.bands.items():
            if region not in REGION_DOMAINS:
                raise ConfigError(f"thresholds: unknown region {region!r}")
            if not bands:
                raise ConfigError(f"thresholds[{region}]: empty band list")
            lo_dom, hi_dom = REGION_DOMAINS[region]
            edge = 0.0
            for lo, hi, score in bands:
                if lo != edge:
                    raise ConfigError(f"thresholds[{region}]: gap or overlap at {edge}")
                if not hi > lo:
                    raise ConfigError(f"thresholds[{region}]: empty band [{lo}, {hi})")
                if not lo_dom <= score <= hi_dom:
                    raise ConfigError(f"thresholds[{region}]: score {score} outside {lo_dom}..{hi_dom}")
                edge = hi
            if edge != MAX_ANGLE:
                raise ConfigError(f"thresholds[{region}]: bands end at {edge}, not {MAX_ANGLE}")

    @classmethod
    def from_json(cls, obj: dict) -> "ScoreThresholds":
        try:
            bands = {
                region: tuple((float(lo), float(hi), int(score)) for lo, hi, score in rows)
                for region, rows in obj.items()
            }
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"thresholds: malformed band list ({exc})") from exc
        return cls(bands)

    def to_json(self) -> dict:
        return {r: [[lo, hi, s] for lo, hi, s in b] for r, b in self.bands.items()}

    def score(self, angle: float, region: str) -> int:
        if not 0.0 <= angle <= MAX_ANGLE:
            raise DomainError(f"{region}: angle {angle!r} outside [0, 180]")
        bands = self.bands[region]
        for lo, hi, s in bands:
            if lo <= angle < hi:
                return s
        lo, hi, s = bands[-1]
        if angle == hi:
            return s
        raise ConfigError(f"thresholds[{region}]: no band contains {angle}")


@dataclass(frozen=True)
class RebaTables:
    table_a: np.ndarray
    table_b: np.ndarray
    table_c: np.ndarray

    def __post_init__(self):
        for name, shape in TABLE_SHAPES.items():
            raw = getattr(self, name)
            try:
                arr = np.array(raw, dtype=np.int64)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: ragged or non-integer table ({exc})") from exc
            if arr.shape != shape:
                raise ConfigError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.array_equal(arr, np.asarray(raw, dtype=float)):
                raise ConfigError(f"{name}: non-integer entries")
            lo, hi = TABLE_RANGES[name]
            if arr.min() < lo or arr.max() > hi:
                raise ConfigError(f"{name}: entries must lie in {lo}..{hi}")
            if arr.flat[0] != 1:
                raise ConfigError(f"{name}: minimum posture must map to 1")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_json(cls, obj: dict) -> "RebaTables":
        missing = [k for k in TABLE_SHAPES if k not in obj]
        if missing:
            raise ConfigError(f"tables config: missing {missing}")
        return cls(obj["table_a"], obj["table_b"], obj["table_c"])

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist() for k in TABLE_SHAPES}


@dataclass(frozen=True)
class RebaResult:
    s_neck: int
    s_trunk: int
    s_leg: int
    s_upper: int
    s_lower: int
    s_wrist: int
    g_a: int
    g_b: int
    s_reba: int
    class_label: int
    angles: Optional[RegionAngles] = field(default=None, compare=False)

    @property
    def region_scores(self) -> dict[str, int]:
        return {
            "neck": self.s_neck,
            "trunk": self.s_trunk,
            "leg": self.s_leg,
            "upper_arm": self.s_upper,
            "lower_arm": self.s_lower,
            "wrist": self.s_wrist,
        }

    def to_record(self, id: str) -> dict:
        return {
            "id": id,
            "scores": self.region_scores,
            "gA": self.g_a,
            "gB": self.g_b,
            "reba": self.s_reba,
            "class": self.class_label,
        }


def load_config(path=None) -> tuple[RebaTables, ScoreThresholds]:
    """Load tables and thresholds from ``path``, ``$ERGORISK_TABLES`` or the shipped default."""
    path = path or os.environ.get("ERGORISK_TABLES")
    if path is None:
        return default_tables(), default_thresholds()
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc.msg})") from exc
    if "thresholds" not in obj:
        raise ConfigError(f"{path}: missing 'thresholds'")
    return RebaTables.from_json(obj), ScoreThresholds.from_json(obj["thresholds"])


@lru_cache(maxsize=1)
def _default_json() -> dict:
    text = resources.files("ergorisk").joinpath("data/reba_default.json").read_text(encoding="utf-8")
    return json.loads(text)


@lru_cache(maxsize=1)
def default_tables() -> RebaTables:
    return RebaTables.from_json(_default_json())


@lru_cache(maxsize=1)
def default_thresholds() -> ScoreThresholds:
    return ScoreThresholds.from_json(_default_json()["thresholds"])


def score_region(angle: float, region: str, thresholds: Optional[ScoreThresholds] = None) -> int:
    return (thresholds or default_thresholds()).score(angle, region)


def _lookup(table: np.ndarray, name: str, *idx: int) -> int:
    for axis, i in enumerate(idx):
        if isinstance(i, bool) or int(i) != i or not 1 <= i <= table.shape[axis]:
            raise DomainError(f"{name}: index {i!r} outside 1..{table.shape[axis]} on axis {axis}")
    return int(table[tuple(int(i) - 1 for i in idx)])


def group_a(s_trunk: int, s_neck: int, s_leg: int, t: Optional[RebaTables] = None) -> int:
    return _lookup((t or default_tables()).table_a, "table_a", s_trunk, s_neck, s_leg)


def group_b(s_upper: int, s_lower: int, s_wrist: int, t: Optional[RebaTables] = None) -> int:
    return _lookup((t or default_tables()).table_b, "table_b", s_upper, s_lower, s_wrist)


def group_c(g_a: int, g_b: int, t: Optional[RebaTables] = None) -> int:
    return _lookup((t or default_tables()).table_c, "table_c", g_a, g_b)


def class_from_score(s_reba: int) -> int:
    return min(s_reba, N_CLASSES)


def assess(
    s: Skeleton,
    cfg: Optional[GeometryConfig] = None,
    thresholds: Optional[ScoreThresholds] = None,
    t: Optional[RebaTables] = None,
) -> RebaResult:
    """Score one (already visibility-filtered) skeleton."""
    thresholds = thresholds or default_thresholds()
    t = t or default_tables()
    try:
        ang = region_angles(s, cfg, thresholds)
    except MissingLandmarkError as exc:
        raise SampleRejected(f"sample {s.id!r} rejected: {exc}") from exc
    sc = {r: thresholds.score(getattr(ang, r), r) for r in REGIONS}
    g_a = group_a(sc["trunk"], sc["neck"], sc["leg"], t)
    g_b = group_b(sc["upper_arm"], sc["lower_arm"], sc["wrist"], t)
    s_reba = group_c(g_a, g_b, t)
    return RebaResult(
        s_neck=sc["neck"],
        s_trunk=sc["trunk"],
        s_leg=sc["leg"],
        s_upper=sc["upper_arm"],
        s_lower=sc["lower_arm"],
        s_wrist=sc["wrist"],
        g_a=g_a,
        g_b=g_b,
        s_reba=s_reba,
        class_label=class_from_score(s_reba),
        angles=ang,
    )


@dataclass
class AnnotationSummary:
    counts: dict[int, int]
    rejects: list[tuple[str, str]]

    @property
    def accepted(self) -> int:
        return sum(self.counts.values())

    def to_json(self) -> dict:
        return {
            "accepted": self.accepted,
            "counts": {str(k): v for k, v in sorted(self.counts.items())},
            "rejected": len(self.rejects),
            "rejects": [{"id": i, "reason": r} for i, r in self.rejects],
        }


def _assess_or_reject(args):
    s, cfg, thresholds, t, vis = args
    try:
        return assess(filter_visibility(s, vis), cfg, thresholds, t)
    except SampleRejected as exc:
        return exc


def score_skeletons(
    skeletons,
    cfg: Optional[GeometryConfig] = None,
    thresholds: Optional[ScoreThresholds] = None,
    t: Optional[RebaTables] = None,
    vis_threshold: float = DEFAULT_VISIBILITY,
    threads: int = 1,
) -> list:
    """``assess`` each skeleton after filtering; rejected samples yield a ``SampleRejected``."""
    jobs = [(s, cfg, thresholds, t, vis_threshold) for s in skeletons]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(_assess_or_reject, jobs))
    return [_assess_or_reject(j) for j in jobs]


def annotate_dataset(
    input_path,
    output_path,
    cfg: Optional[GeometryConfig] = None,
    thresholds: Optional[ScoreThresholds] = None,
    t: Optional[RebaTables] = None,
    vis_threshold: float = DEFAULT_VISIBILITY,
    threads: int = 1,
) -> AnnotationSummary:
    """Label every skeleton in ``input_path``; write accepted records as JSONL.

    Any malformed input line aborts the whole file before anything is written.
    """
    skeletons = parse_landmark_file(input_path)
    results = score_skeletons(skeletons, cfg, thresholds, t, vis_threshold, threads)
    counts = {c: 0 for c in range(1, N_CLASSES + 1)}
    rejects = []
    lines = []
    for s, res in zip(skeletons, results):
        if isinstance(res, SampleRejected):
            rejects.append((s.id, str(res.__cause__ or res)))
            continue
        counts[res.class_label] += 1
        lines.append(json.dumps(res.to_record(s.id), separators=(",", ":")))
    try:
        Path(output_path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{output_path}: cannot write labels ({exc.strerror})") from exc
    return AnnotationSummary(counts, rejects)
