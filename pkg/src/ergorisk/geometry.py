"""Joint angles and vertical inclinations from 2D skeletons.

All angles are in degrees. Region angles are measured on normalized
coordinates; ``overlay_svg`` is the only consumer of pixel coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import DomainError, MissingLandmarkError
from .pose_io import LandmarkIndex as L
from .pose_io import Skeleton, rescale_to_pixels

Point = tuple[float, float]

SIDES = ("left", "right")

# Edges drawn by the overlay and the stick-figure renderer.
SKELETON_EDGES: tuple[tuple[int, int], ...] = (
    (L.nose, L.left_ear),
    (L.nose, L.right_ear),
    (L.left_ear, L.left_shoulder),
    (L.right_ear, L.right_shoulder),
    (L.left_shoulder, L.right_shoulder),
    (L.left_hip, L.right_hip),
    (L.left_shoulder, L.left_hip),
    (L.right_shoulder, L.right_hip),
    (L.left_shoulder, L.left_elbow),
    (L.right_shoulder, L.right_elbow),
    (L.left_elbow, L.left_wrist),
    (L.right_elbow, L.right_wrist),
    (L.left_wrist, L.left_index),
    (L.right_wrist, L.right_index),
    (L.left_hip, L.left_knee),
    (L.right_hip, L.right_knee),
    (L.left_knee, L.left_ankle),
    (L.right_knee, L.right_ankle),
)

# Per-side triplets (A, B, C), angle measured at B.
TRIPLETS: dict[str, dict[str, tuple[int, int, int]]] = {
    "leg": {
        "left": (L.left_hip, L.left_knee, L.left_ankle),
        "right": (L.right_hip, L.right_knee, L.right_ankle),
    },
    "upper_arm": {
        "left": (L.left_hip, L.left_shoulder, L.left_elbow),
        "right": (L.right_hip, L.right_shoulder, L.right_elbow),
    },
    "lower_arm": {
        "left": (L.left_shoulder, L.left_elbow, L.left_wrist),
        "right": (L.right_shoulder, L.right_elbow, L.right_wrist),
    },
    "wrist": {
        "left": (L.left_elbow, L.left_wrist, L.left_index),
        "right": (L.right_elbow, L.right_wrist, L.right_index),
    },
}

REQUIRED_LANDMARKS: tuple[int, ...] = tuple(sorted(
    {L.left_ear, L.right_ear, L.left_shoulder, L.right_shoulder, L.left_hip, L.right_hip}
    | {i for sides in TRIPLETS.values() for t in sides.values() for i in t}
))


@dataclass(frozen=True)
class GeometryConfig:
    epsilon: float = 1e-6
    index_map: dict = field(default_factory=L.as_dict)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class RegionAngles:
    """Per-region angles in degrees.

    ``leg`` is knee flexion (0 = straight knee), ``lower_arm`` is the
    interior elbow angle (180 = straight arm) and ``wrist`` is deviation
    from a straight wrist. ``neck`` is measured relative to the trunk.
    Side-less fields hold the aggregated (worst-case) side.
    """

    neck: float
    trunk: float
    leg: float
    upper_arm: float
    lower_arm: float
    wrist: float
    leg_left: float
    leg_right: float
    upper_arm_left: float
    upper_arm_right: float
    lower_arm_left: float
    lower_arm_right: float
    wrist_left: float
    wrist_right: float

    def side(self, region: str, side: str) -> float:
        return getattr(self, f"{region}_{side}")

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def joint_angle(a: Point, b: Point, c: Point, joint: str = "joint") -> float:
    """Angle ABC at vertex ``b``, via the clamped cosine of BA and BC."""
    bax, bay = a[0] - b[0], a[1] - b[1]
    bcx, bcy = c[0] - b[0], c[1] - b[1]
    na = math.hypot(bax, bay)
    nc = math.hypot(bcx, bcy)
    if na == 0.0 or nc == 0.0:
        raise DomainError(f"{joint}: zero-length segment, angle undefined")
    cos = (bax * bcx + bay * bcy) / (na * nc)
    cos = min(1.0, max(-1.0, cos))
    return math.degrees(math.acos(cos))


def inclination_angle(p_top: Point, p_bottom: Point, epsilon: float = 1e-6) -> float:
    """Deviation of the segment from vertical, ``atan((|dx| + eps) / |dy|)``."""
    dx = abs(p_top[0] - p_bottom[0])
    dy = abs(p_top[1] - p_bottom[1])
    if dy == 0.0:
        return 90.0
    return math.degrees(math.atan((dx + epsilon) / dy))


def midpoint(p: Point, q: Point) -> Point:
    return ((p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0)


def landmark_midpoint(s: Skeleton, i: int, j: int, region: str) -> Point:
    missing = [k for k in (i, j) if not s.present(k)]
    if missing:
        raise MissingLandmarkError(region, missing)
    return midpoint(s.point(i), s.point(j))


def _check_present(s: Skeleton, indices: Sequence[int], region: str) -> None:
    missing = [i for i in indices if not s.present(i)]
    if missing:
        raise MissingLandmarkError(region, missing)


def side_angles(s: Skeleton, region: str) -> dict[str, float]:
    """Raw joint angle for each side of ``region`` (before region transforms)."""
    out = {}
    for side, (a, b, c) in TRIPLETS[region].items():
        _check_present(s, (a, b, c), f"{side} {region}")
        out[side] = joint_angle(s.point(a), s.point(b), s.point(c), joint=f"{side} {region}")
    return out


def region_angles(s: Skeleton, cfg: Optional[GeometryConfig] = None, thresholds=None) -> RegionAngles:
    """Angles for the six scored regions.

    Sides are aggregated by keeping the side with the higher region score
    under ``thresholds`` (left on ties); the shipped REBA bands are used
    when ``thresholds`` is None.
    """
    cfg = cfg or GeometryConfig()
    absent = [i for i in REQUIRED_LANDMARKS if not s.present(i)]
    if absent:
        raise MissingLandmarkError("skeleton", absent)
    if thresholds is None:
        from .reba import default_thresholds
        thresholds = default_thresholds()

    shoulder_mid = landmark_midpoint(s, L.left_shoulder, L.right_shoulder, "trunk")
    hip_mid = landmark_midpoint(s, L.left_hip, L.right_hip, "trunk")
    ear_mid = landmark_midpoint(s, L.left_ear, L.right_ear, "neck")
    trunk = inclination_angle(shoulder_mid, hip_mid, cfg.epsilon)
    neck = abs(inclination_angle(ear_mid, shoulder_mid, cfg.epsilon) - trunk)

    raw = {region: side_angles(s, region) for region in TRIPLETS}
    per_side = {
        "leg": {k: 180.0 - v for k, v in raw["leg"].items()},
        "upper_arm": raw["upper_arm"],
        "lower_arm": raw["lower_arm"],
        "wrist": {k: abs(180.0 - v) for k, v in raw["wrist"].items()},
    }
    fields = {"neck": neck, "trunk": trunk}
    for region, sides in per_side.items():
        left, right = sides["left"], sides["right"]
        worse_right = thresholds.score(right, region) > thresholds.score(left, region)
        fields[region] = right if worse_right else left
        fields[f"{region}_left"] = left
        fields[f"{region}_right"] = right
    return RegionAngles(**fields)


def overlay_svg(s: Skeleton, edges: Sequence[tuple[int, int]] = SKELETON_EDGES, radius: float = 3.0) -> str:
    """SVG drawing of present landmarks and the edges between them, in pixel space."""
    px = rescale_to_pixels(s)
    w, h = px.image_width, px.image_height
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
    ]
    for i, j in edges:
        if px.present(i) and px.present(j):
            (x1, y1), (x2, y2) = px.point(i), px.point(j)
            lines.append(
                f'<line x1="{x1:.3f}" y1="{y1:.3f}" x2="{x2:.3f}" y2="{y2:.3f}" stroke="black" stroke-width="2"/>'
            )
    for i, lm in enumerate(px.landmarks):
        if lm is not None:
            lines.append(f'<circle id="lm{i}" cx="{lm.x:.3f}" cy="{lm.y:.3f}" r="{radius:g}" fill="red"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
