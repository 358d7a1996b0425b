"""Reading, validating, filtering and rescaling 33-landmark pose records.

Records come either as JSONL::

    {"id": "s0", "w": 640, "h": 480, "lm": [[x, y, v], ... 33 entries]}

or as CSV with header ``id,w,h,x0,y0,v0,...,x32,y32,v32``. An absent
landmark is written as ``null`` (JSONL) or three empty cells (CSV).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .errors import LandmarkValueError, SchemaError

N_LANDMARKS = 33
DEFAULT_VISIBILITY = 0.5


class LandmarkIndex:
    """Named slots of the 33-point body topology that scoring relies on."""

    nose = 0
    left_ear = 7
    right_ear = 8
    left_shoulder = 11
    right_shoulder = 12
    left_elbow = 13
    right_elbow = 14
    left_wrist = 15
    right_wrist = 16
    left_index = 19
    right_index = 20
    left_hip = 23
    right_hip = 24
    left_knee = 25
    right_knee = 26
    left_ankle = 27
    right_ankle = 28

    @classmethod
    def as_dict(cls) -> dict[str, int]:
        return {k: v for k, v in vars(cls).items() if isinstance(v, int) and not k.startswith("_")}


@dataclass(frozen=True)
class Landmark:
    x: float
    y: float
    v: float


@dataclass(frozen=True)
class Skeleton:
    """One subject. ``landmarks[i] is None`` means slot ``i`` is absent."""

    landmarks: tuple[Optional[Landmark], ...]
    image_width: int
    image_height: int
    id: str = ""
    space: str = "normalized"

    def __post_init__(self):
        if len(self.landmarks) != N_LANDMARKS:
            raise SchemaError(f"skeleton {self.id!r}: expected {N_LANDMARKS} landmarks, got {len(self.landmarks)}")

    def present(self, i: int) -> bool:
        return self.landmarks[i] is not None

    @property
    def presence(self) -> tuple[bool, ...]:
        return tuple(lm is not None for lm in self.landmarks)

    def point(self, i: int) -> tuple[float, float]:
        lm = self.landmarks[i]
        if lm is None:
            raise KeyError(i)
        return (lm.x, lm.y)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "w": self.image_width,
            "h": self.image_height,
            "lm": [None if lm is None else [lm.x, lm.y, lm.v] for lm in self.landmarks],
        }

    def coords(self, fill: float = 0.0) -> list[tuple[float, float]]:
        """(x, y) per slot, absent slots replaced by ``(fill, fill)``."""
        return [(fill, fill) if lm is None else (lm.x, lm.y) for lm in self.landmarks]


def _as_float(value, where: str) -> float:
    try:
        f = float(value)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: not a number: {value!r}") from exc
    if not math.isfinite(f):
        raise LandmarkValueError(f"{where}: non-finite value {value!r}")
    return f


def _as_dim(value, where: str) -> int:
    if isinstance(value, bool):
        raise SchemaError(f"{where}: expected integer, got {value!r}")
    try:
        f = float(value)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: expected integer, got {value!r}") from exc
    if not f.is_integer():
        raise SchemaError(f"{where}: expected integer, got {value!r}")
    return int(f)


def _landmark(triple, where: str) -> Optional[Landmark]:
    if triple is None:
        return None
    if not isinstance(triple, (list, tuple)) or len(triple) != 3:
        raise SchemaError(f"{where}: expected [x, y, v], got {triple!r}")
    x, y, v = (_as_float(t, where) for t in triple)
    for name, val in (("x", x), ("y", y), ("v", v)):
        if not 0.0 <= val <= 1.0:
            raise LandmarkValueError(f"{where}: {name}={val!r} outside [0, 1]")
    return Landmark(x, y, v)


def skeleton_from_record(rec: dict, where: str = "record") -> Skeleton:
    if not isinstance(rec, dict):
        raise SchemaError(f"{where}: expected an object")
    missing = [k for k in ("id", "w", "h", "lm") if k not in rec]
    if missing:
        raise SchemaError(f"{where}: missing field(s) {missing}")
    lm = rec["lm"]
    if not isinstance(lm, list) or len(lm) != N_LANDMARKS:
        n = len(lm) if isinstance(lm, list) else "non-list"
        raise SchemaError(f"{where}: expected {N_LANDMARKS} landmarks, got {n}")
    landmarks = tuple(_landmark(t, f"{where}, landmark {i}") for i, t in enumerate(lm))
    return Skeleton(
        landmarks=landmarks,
        image_width=_as_dim(rec["w"], f"{where}, w"),
        image_height=_as_dim(rec["h"], f"{where}, h"),
        id=str(rec["id"]),
    )


def _iter_jsonl(path: Path) -> Iterator[Skeleton]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{where}: malformed JSON ({exc.msg})") from exc
            yield skeleton_from_record(rec, where)


def csv_header() -> list[str]:
    cols = ["id", "w", "h"]
    for i in range(N_LANDMARKS):
        cols += [f"x{i}", f"y{i}", f"v{i}"]
    return cols


def _iter_csv(path: Path) -> Iterator[Skeleton]:
    expected = csv_header()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return
        if header != expected:
            raise SchemaError(f"{path}:1: bad header")
        for row in reader:
            where = f"{path}:{reader.line_num}"
            if not row:
                continue
            if len(row) != len(expected):
                raise SchemaError(
                    f"{where}: expected {N_LANDMARKS} landmarks ({len(expected)} columns), got {len(row)} columns"
                )
            lm = []
            for i in range(N_LANDMARKS):
                cells = row[3 + 3 * i: 6 + 3 * i]
                lm.append(None if all(c == "" for c in cells) else cells)
            yield skeleton_from_record({"id": row[0], "w": row[1], "h": row[2], "lm": lm}, where)


def parse_landmark_file(path, format: Optional[str] = None) -> list[Skeleton]:
    """Parse every record in ``path``; format is inferred from the suffix if not given."""
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    if fmt == "jsonl":
        return list(_iter_jsonl(path))
    if fmt == "csv":
        return list(_iter_csv(path))
    raise ValueError(f"unknown landmark format {fmt!r}")


def write_landmark_file(path, skeletons: Iterable[Skeleton], format: Optional[str] = None) -> None:
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for s in skeletons:
                fh.write(json.dumps(s.to_record(), separators=(",", ":")) + "\n")
    elif fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(csv_header())
            for s in skeletons:
                row = [s.id, s.image_width, s.image_height]
                for lm in s.landmarks:
                    row += ["", "", ""] if lm is None else [repr(lm.x), repr(lm.y), repr(lm.v)]
                writer.writerow(row)
    else:
        raise ValueError(f"unknown landmark format {fmt!r}")


def filter_visibility(s: Skeleton, threshold: float = DEFAULT_VISIBILITY) -> Skeleton:
    """Drop landmarks whose visibility is below ``threshold``."""
    kept = tuple(lm if lm is not None and lm.v >= threshold else None for lm in s.landmarks)
    return replace(s, landmarks=kept)


def rescale_to_pixels(s: Skeleton) -> Skeleton:
    if s.image_width <= 0 or s.image_height <= 0:
        raise LandmarkValueError(
            f"skeleton {s.id!r}: image dimensions must be positive, got {s.image_width}x{s.image_height}"
        )
    if s.space == "pixels":
        return s
    w, h = s.image_width, s.image_height
    scaled = tuple(None if lm is None else Landmark(lm.x * w, lm.y * h, lm.v) for lm in s.landmarks)
    return replace(s, landmarks=scaled, space="pixels")


def make_skeleton(points: Sequence[Optional[tuple]], width: int = 1, height: int = 1, id: str = "") -> Skeleton:
    """Build a skeleton from ``(x, y)`` or ``(x, y, v)`` tuples (``None`` for absent slots)."""
    lms = []
    for p in points:
        if p is None:
            lms.append(None)
        else:
            v = p[2] if len(p) > 2 else 1.0
            lms.append(Landmark(float(p[0]), float(p[1]), float(v)))
    return Skeleton(tuple(lms), width, height, id)
