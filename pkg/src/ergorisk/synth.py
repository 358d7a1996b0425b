"""Synthetic stick figures: paired image, skeleton and REBA label.

A :class:`FigureSpec` holds target region angles; forward kinematics
places the 17 scored landmarks so that :func:`~ergorisk.geometry.region_angles`
recovers those angles, and the figure is rasterized onto a white canvas.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import checkpoint
from .autodiff.rng import Rng
from .geometry import SKELETON_EDGES
from .pose_io import N_LANDMARKS, Landmark, LandmarkIndex as L, Skeleton, write_landmark_file
from .reba import N_CLASSES, RebaTables, ScoreThresholds, assess

# Sampling ranges (degrees). They straddle every band of the shipped thresholds.
ANGLE_RANGES = {
    "trunk": (0.0, 70.0),
    "neck": (0.0, 45.0),
    "knee": (0.0, 100.0),
    "upper_arm": (0.0, 150.0),
    "elbow": (40.0, 180.0),
    "wrist": (0.0, 40.0),
    "thigh": (0.0, 30.0),
}
# head inclination (trunk + neck) stays below this so inclination is not folded
MAX_HEAD_INCLINATION = 85.0

BASE_LENGTHS = {
    "trunk": 0.30,
    "neck": 0.09,
    "nose": 0.04,
    "upper_arm": 0.15,
    "forearm": 0.13,
    "hand": 0.05,
    "thigh": 0.20,
    "shank": 0.19,
}
MARGIN = 0.05
LEFT_SHADE = 0.5

_LEFT = {L.left_ear, L.left_shoulder, L.left_elbow, L.left_wrist, L.left_index, L.left_hip, L.left_knee, L.left_ankle}


@dataclass(frozen=True)
class FigureSpec:
    trunk: float
    neck: float
    knee: tuple[float, float]
    upper_arm: tuple[float, float]
    elbow: tuple[float, float]
    wrist: tuple[float, float]
    thigh: tuple[float, float] = (0.0, 0.0)
    lengths: dict = field(default_factory=lambda: dict(BASE_LENGTHS))
    root: tuple[float, float] = (0.5, 0.62)
    facing: int = 1
    side_offset: float = 0.02
    canvas: int = 64
    stroke: float = 1.5

    def __post_init__(self):
        missing = [k for k in BASE_LENGTHS if not self.lengths.get(k, 0) > 0]
        if missing:
            raise ValueError(f"figure needs a positive length for every segment, missing {missing}")
        if self.canvas <= 0 or self.stroke <= 0:
            raise ValueError("canvas and stroke must be positive")
        if self.facing not in (1, -1):
            raise ValueError("facing must be 1 or -1")

    def to_json(self) -> dict:
        return asdict(self)


def _pair(rng: Rng, lo: float, hi: float) -> tuple[float, float]:
    a, b = rng.uniform(lo, hi, 2)
    return (float(a), float(b))


def sample_figure(rng: Rng, canvas: int = 64, stroke: float = 1.5) -> FigureSpec:
    """Random pose with every region angle drawn uniformly from ``ANGLE_RANGES``."""
    trunk = float(rng.uniform(*ANGLE_RANGES["trunk"]))
    neck_hi = min(ANGLE_RANGES["neck"][1], MAX_HEAD_INCLINATION - trunk)
    neck = float(rng.uniform(0.0, neck_hi))
    jitter = rng.uniform(0.9, 1.1, len(BASE_LENGTHS))
    lengths = {k: float(v * j) for (k, v), j in zip(BASE_LENGTHS.items(), jitter)}
    return FigureSpec(
        trunk=trunk,
        neck=neck,
        knee=_pair(rng, *ANGLE_RANGES["knee"]),
        upper_arm=_pair(rng, *ANGLE_RANGES["upper_arm"]),
        elbow=_pair(rng, *ANGLE_RANGES["elbow"]),
        wrist=_pair(rng, *ANGLE_RANGES["wrist"]),
        thigh=_pair(rng, *ANGLE_RANGES["thigh"]),
        lengths=lengths,
        root=(float(rng.uniform(0.35, 0.65)), float(rng.uniform(0.5, 0.7))),
        facing=1 if rng.random() < 0.5 else -1,
        side_offset=float(rng.uniform(0.0, 0.03)),
        canvas=canvas,
        stroke=stroke,
    )


def _direction(phi_deg: float, facing: int) -> np.ndarray:
    """Unit vector ``phi`` degrees from straight down, rotated toward the facing side."""
    phi = math.radians(phi_deg)
    return np.array([facing * math.sin(phi), math.cos(phi)])


def figure_points(spec: FigureSpec) -> dict[int, np.ndarray]:
    """Forward kinematics for the 17 scored landmarks, fitted inside the unit square."""
    f = spec.facing
    ln = spec.lengths
    d = lambda phi: _direction(phi, f)  # noqa: E731
    hip_mid = np.array(spec.root, dtype=float)
    shoulder_mid = hip_mid + ln["trunk"] * d(180.0 - spec.trunk)
    ear_mid = shoulder_mid + ln["neck"] * d(180.0 - spec.trunk - spec.neck)
    pts: dict[int, np.ndarray] = {L.nose: ear_mid + ln["nose"] * d(90.0 - spec.trunk - spec.neck)}
    for side, sgn in (("left", -1.0), ("right", 1.0)):
        i = 0 if side == "left" else 1
        off = np.array([sgn * spec.side_offset, 0.0])
        sh = shoulder_mid + off
        hip = hip_mid + off
        arm_phi = -spec.trunk + spec.upper_arm[i]
        elbow = sh + ln["upper_arm"] * d(arm_phi)
        fore_phi = arm_phi + 180.0 - spec.elbow[i]
        wrist = elbow + ln["forearm"] * d(fore_phi)
        index = wrist + ln["hand"] * d(fore_phi + spec.wrist[i])
        knee = hip + ln["thigh"] * d(spec.thigh[i])
        ankle = knee + ln["shank"] * d(spec.thigh[i] - spec.knee[i])
        ear = ear_mid + off * 0.5
        pts.update({
            getattr(L, f"{side}_ear"): ear,
            getattr(L, f"{side}_shoulder"): sh,
            getattr(L, f"{side}_elbow"): elbow,
            getattr(L, f"{side}_wrist"): wrist,
            getattr(L, f"{side}_index"): index,
            getattr(L, f"{side}_hip"): hip,
            getattr(L, f"{side}_knee"): knee,
            getattr(L, f"{side}_ankle"): ankle,
        })
    # uniform scale + translation keeps every angle
    arr = np.array(list(pts.values()))
    lo, hi = arr.min(axis=0), arr.max(axis=0)
    span = float((hi - lo).max())
    room = 1.0 - 2 * MARGIN
    scale = min(1.0, room / span) if span > 0 else 1.0
    center = (lo + hi) / 2.0
    scaled_lo = center + (lo - center) * scale
    scaled_hi = center + (hi - center) * scale
    shift = np.maximum(0.0, MARGIN - scaled_lo) - np.maximum(0.0, scaled_hi - (1.0 - MARGIN))
    return {k: center + (v - center) * scale + shift for k, v in pts.items()}


def figure_to_skeleton(spec: FigureSpec, id: str = "") -> Skeleton:
    pts = figure_points(spec)
    lms: list[Optional[Landmark]] = [None] * N_LANDMARKS
    for k, p in pts.items():
        x = min(1.0, max(0.0, float(p[0])))
        y = min(1.0, max(0.0, float(p[1])))
        lms[k] = Landmark(x, y, 1.0)
    return Skeleton(tuple(lms), spec.canvas, spec.canvas, id)


def _draw_segment(img: np.ndarray, p: np.ndarray, q: np.ndarray, radius: float, value: float) -> None:
    size = img.shape[0]
    x0 = int(max(0, math.floor(min(p[0], q[0]) - radius - 1)))
    x1 = int(min(size, math.ceil(max(p[0], q[0]) + radius + 1)))
    y0 = int(max(0, math.floor(min(p[1], q[1]) - radius - 1)))
    y1 = int(min(size, math.ceil(max(p[1], q[1]) + radius + 1)))
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    cx, cy = xs + 0.5, ys + 0.5
    dx, dy = q[0] - p[0], q[1] - p[1]
    ll = dx * dx + dy * dy
    t = np.zeros_like(cx) if ll == 0 else np.clip(((cx - p[0]) * dx + (cy - p[1]) * dy) / ll, 0.0, 1.0)
    dist2 = (cx - p[0] - t * dx) ** 2 + (cy - p[1] - t * dy) ** 2
    region = img[y0:y1, x0:x1]
    region[dist2 <= radius * radius] = value


def render_stick_figure(spec: FigureSpec, size: Optional[int] = None) -> np.ndarray:
    """[3, size, size] float32 image in [0, 1]: white background, dark strokes, left side grey."""
    size = size or spec.canvas
    pts = figure_points(spec)
    missing = [i for e in SKELETON_EDGES for i in e if i not in pts]
    if missing:
        raise ValueError(f"figure lacks landmarks {sorted(set(missing))}")
    img = np.ones((size, size), dtype=np.float32)
    radius = max(spec.stroke * size / spec.canvas, 1.0)
    ordered = sorted(SKELETON_EDGES, key=lambda e: not (e[0] in _LEFT or e[1] in _LEFT))
    for a, b in ordered:
        shade = LEFT_SHADE if (a in _LEFT and b in _LEFT) else 0.0
        _draw_segment(img, pts[a] * size, pts[b] * size, radius, shade)
    return np.repeat(img[None], 3, axis=0)


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6 pixmap from a [3, H, W] array in [0, 1]."""
    c, h, w = image.shape
    rgb = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    data = np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return (data.transpose(2, 0, 1).astype(np.float32) / maxval)


@dataclass
class Manifest:
    ids: list
    labels: list
    histogram: dict
    seed: int
    size: int

    def to_json(self) -> dict:
        return {
            "n": len(self.ids),
            "seed": self.seed,
            "size": self.size,
            "histogram": {str(c): self.histogram.get(c, 0) for c in range(1, N_CLASSES + 1)},
        }


def generate_samples(n: int, seed: int, size: int = 64, thresholds: Optional[ScoreThresholds] = None,
                     tables: Optional[RebaTables] = None):
    """Yield ``(id, spec, skeleton, image, RebaResult)`` for ``n`` seeded samples."""
    root = Rng(seed)
    for i in range(n):
        sid = f"{i:06d}"
        spec = sample_figure(root.child(i), canvas=size)
        skel = figure_to_skeleton(spec, sid)
        res = assess(skel, None, thresholds, tables)
        yield sid, spec, skel, render_stick_figure(spec, size), res


def gen_dataset(n: int, seed: int, out_dir, size: int = 64, thresholds: Optional[ScoreThresholds] = None,
                tables: Optional[RebaTables] = None, write_ppm_files: bool = True) -> Manifest:
    """Write ``n`` samples to ``out_dir``.

    Layout: ``images/<id>.ppm``, ``images.ergk`` (all image tensors),
    ``skeletons.jsonl``, ``labels.jsonl``, ``manifest.jsonl`` and ``summary.json``.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    ids, labels, skeletons, tensors = [], [], [], {}
    manifest_lines, label_lines = [], []
    for sid, _, skel, img, res in generate_samples(n, seed, size, thresholds, tables):
        ids.append(sid)
        labels.append(res.class_label)
        skeletons.append(skel)
        tensors[sid] = img
        if write_ppm_files:
            write_ppm(out / "images" / f"{sid}.ppm", img)
        manifest_lines.append(json.dumps(
            {"id": sid, "image": f"images/{sid}.ppm", "class": res.class_label, "reba": res.s_reba},
            separators=(",", ":")))
        label_lines.append(json.dumps(res.to_record(sid), separators=(",", ":")))
    write_landmark_file(out / "skeletons.jsonl", skeletons)
    checkpoint.save(out / "images.ergk", tensors)
    (out / "manifest.jsonl").write_text("".join(s + "\n" for s in manifest_lines), encoding="utf-8")
    (out / "labels.jsonl").write_text("".join(s + "\n" for s in label_lines), encoding="utf-8")
    hist = dict(sorted(Counter(labels).items()))
    manifest = Manifest(ids, labels, hist, seed, size)
    (out / "summary.json").write_text(json.dumps(manifest.to_json(), indent=2) + "\n", encoding="utf-8")
    return manifest


def upright_spec(canvas: int = 64) -> FigureSpec:
    """Standing straight: vertical trunk and head, arms hanging, knees and elbows straight."""
    return FigureSpec(trunk=0.0, neck=0.0, knee=(0.0, 0.0), upper_arm=(0.0, 0.0), elbow=(180.0, 180.0),
                      wrist=(0.0, 0.0), side_offset=0.03, canvas=canvas)
