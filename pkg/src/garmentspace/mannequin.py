"""Procedural capsule mannequin.

A 10-dim normalized shape vector produces a collision-ready body made of
capsules (exact signed distance queries) plus the shrunken-skeleton variant
used by the drape protocol. Stands on y=0, faces +z, y up.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

# (name, lo, hi) in meters; shape vector entries are normalized into these.
BODY_RANGES: tuple[tuple[str, float, float], ...] = (
    ("height", 1.45, 1.95),
    ("chest_radius", 0.10, 0.18),
    ("waist_radius", 0.085, 0.165),
    ("hip_radius", 0.10, 0.19),
    ("shoulder_width", 0.32, 0.46),
    ("arm_length", 0.50, 0.68),
    ("arm_radius", 0.030, 0.050),
    ("leg_length", 0.70, 0.95),
    ("leg_radius", 0.05, 0.085),
    ("neck_length", 0.08, 0.14),
)

HEAD_SPAN = 0.22  # top of head to neck top
HEAD_RADIUS = 0.09
NECK_RADIUS = 0.05
SHOULDER_BAR_RADIUS = 0.045

# Default-body reference measurements (all shape entries at 0.5); pattern
# denormalization scales against these.
DEFAULT_HEIGHT = 1.70
DEFAULT_CHEST_RADIUS = 0.14
DEFAULT_CHEST_CIRCUMFERENCE = 2.0 * np.pi * DEFAULT_CHEST_RADIUS
DEFAULT_WAIST_RADIUS = 0.125
DEFAULT_ARM_LENGTH = 0.59


class PoseSpec(enum.Enum):
    """Fixed pose set: rest A-pose for draping, target pose for the result."""

    REST = "rest"
    TARGET = "target"


ARM_ANGLE = {PoseSpec.REST: np.deg2rad(70.0), PoseSpec.TARGET: np.deg2rad(40.0)}


@dataclass(frozen=True, eq=False)
class BodyShape:
    """Normalized body shape vector, entries in [0,1].

    Order: height, chest, waist, hip, shoulder width, arm length,
    arm radius, leg length, leg radius, neck length.
    """

    shape: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.shape, dtype=np.float64)
        if arr.shape != (10,):
            raise ValueError(f"body shape must have 10 entries, got {arr.shape}")
        if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
            raise ValueError("body shape entries must lie in [0,1]")
        object.__setattr__(self, "shape", arr)

    @staticmethod
    def default() -> "BodyShape":
        return BodyShape(np.full(10, 0.5))

    def physical(self) -> dict[str, float]:
        """Denormalize into meters per BODY_RANGES."""
        return {
            name: lo + float(t) * (hi - lo)
            for (name, lo, hi), t in zip(BODY_RANGES, self.shape)
        }


@dataclass(frozen=True, eq=False)
class Capsule:
    name: str
    a: np.ndarray  # segment start (3,)
    b: np.ndarray  # segment end (3,)
    radius: float


@dataclass(frozen=True, eq=False)
class Mannequin:
    """Capsule skeleton with exact SDF queries; immutable after build."""

    capsules: tuple[Capsule, ...]
    pose: PoseSpec
    arm_angle: float
    measurements: dict[str, float]
    body: BodyShape

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(starts, ends, radii) arrays for vectorized / compiled consumers."""
        a = np.stack([c.a for c in self.capsules])
        b = np.stack([c.b for c in self.capsules])
        r = np.array([c.radius for c in self.capsules])
        return a, b, r

    def sdf(self, points: np.ndarray) -> np.ndarray:
        """Signed distance to the body surface, negative inside."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        a, b, r = self.as_arrays()
        ab = b - a  # (k,3)
        denom = np.einsum("kd,kd->k", ab, ab)
        denom = np.where(denom < 1e-18, 1.0, denom)
        # t: (n,k) clamped projection parameter of each point on each segment
        t = np.clip(np.einsum("nkd,kd->nk", p[:, None, :] - a[None], ab) / denom, 0.0, 1.0)
        closest = a[None] + t[..., None] * ab[None]
        d = np.linalg.norm(p[:, None, :] - closest, axis=-1) - r[None]
        out = d.min(axis=1)
        return out if np.asarray(points).ndim == 2 else out[0]

    def sdf_gradient(self, points: np.ndarray) -> np.ndarray:
        """Unit outward direction of the nearest capsule (meaningful off-axis)."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        a, b, r = self.as_arrays()
        ab = b - a
        denom = np.einsum("kd,kd->k", ab, ab)
        denom = np.where(denom < 1e-18, 1.0, denom)
        t = np.clip(np.einsum("nkd,kd->nk", p[:, None, :] - a[None], ab) / denom, 0.0, 1.0)
        closest = a[None] + t[..., None] * ab[None]
        delta = p[:, None, :] - closest
        dist = np.linalg.norm(delta, axis=-1)
        nearest = np.argmin(dist - r[None], axis=1)
        rows = np.arange(len(p))
        g = delta[rows, nearest]
        n = np.linalg.norm(g, axis=-1, keepdims=True)
        g = np.where(n > 1e-12, g / np.maximum(n, 1e-12), np.array([0.0, 1.0, 0.0]))
        return g if np.asarray(points).ndim == 2 else g[0]

    def tessellate(self, n_around: int = 12, n_cap: int = 4) -> tuple[np.ndarray, np.ndarray]:
        """Triangle mesh of all capsules at a fixed resolution (for OBJ/eval)."""
        verts, tris = [], []
        for c in self.capsules:
            v, t = _tessellate_capsule(c, n_around, n_cap)
            tris.append(t + sum(len(x) for x in verts))
            verts.append(v)
        return np.concatenate(verts), np.concatenate(tris)


def _orthonormal_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    axis = axis / max(np.linalg.norm(axis), 1e-12)
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, helper)
    u /= max(np.linalg.norm(u), 1e-12)
    v = np.cross(axis, u)
    return u, v


def _tessellate_capsule(c: Capsule, n_around: int, n_cap: int) -> tuple[np.ndarray, np.ndarray]:
    axis = c.b - c.a
    length = np.linalg.norm(axis)
    if length < 1e-9:
        axis = np.array([0.0, 1.0, 0.0])
        length = 0.0
    u, v = _orthonormal_frame(axis if length > 0 else np.array([0.0, 1.0, 0.0]))
    ang = np.linspace(0.0, 2 * np.pi, n_around, endpoint=False)
    ring_dirs = np.outer(np.cos(ang), u) + np.outer(np.sin(ang), v)  # (n_around,3)
    rows = []
    # bottom hemisphere (around a), cylinder rings, top hemisphere (around b)
    for i in range(n_cap, 0, -1):
        phi = (np.pi / 2) * i / n_cap
        rows.append(c.a - np.sin(phi) * c.radius * _unit(axis) + np.cos(phi) * c.radius * ring_dirs)
    rows.append(c.a + c.radius * ring_dirs)
    rows.append(c.b + c.radius * ring_dirs)
    for i in range(1, n_cap + 1):
        phi = (np.pi / 2) * i / n_cap
        rows.append(c.b + np.sin(phi) * c.radius * _unit(axis) + np.cos(phi) * c.radius * ring_dirs)
    pole_a = c.a - c.radius * _unit(axis)
    pole_b = c.b + c.radius * _unit(axis)
    verts = np.concatenate(rows + [pole_a[None], pole_b[None]])
    tris = []
    n_rows = len(rows)
    for r in range(n_rows - 1):
        for k in range(n_around):
            k2 = (k + 1) % n_around
            i0, i1 = r * n_around + k, r * n_around + k2
            j0, j1 = (r + 1) * n_around + k, (r + 1) * n_around + k2
            tris.append([i0, j0, i1])
            tris.append([i1, j0, j1])
    ia, ib = len(verts) - 2, len(verts) - 1
    for k in range(n_around):
        k2 = (k + 1) % n_around
        tris.append([ia, k, k2])
        tris.append([ib, (n_rows - 1) * n_around + k2, (n_rows - 1) * n_around + k])
    return verts, np.asarray(tris, dtype=np.int64)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 1e-12 else np.array([0.0, 1.0, 0.0])


def build_mannequin(b: BodyShape, pose: PoseSpec = PoseSpec.REST, arm_angle: float | None = None) -> Mannequin:
    """Deterministic capsule skeleton for a normalized shape vector.

    `arm_angle` (radians from vertical) overrides the pose preset; the drape
    protocol uses it to ramp between rest and target poses.
    """
    m = b.physical()
    theta = ARM_ANGLE[pose] if arm_angle is None else float(arm_angle)
    height = m["height"]
    hip_y = m["leg_length"]
    shoulders_y = height - HEAD_SPAN - m["neck_length"]
    torso = max(shoulders_y - hip_y, 0.05)
    sw = m["shoulder_width"]

    def cap(name, a, bb, r):
        return Capsule(name, np.asarray(a, dtype=np.float64), np.asarray(bb, dtype=np.float64), float(r))

    caps = [
        cap("head", (0, height - HEAD_RADIUS, 0), (0, height - HEAD_SPAN + HEAD_RADIUS, 0), HEAD_RADIUS),
        cap("neck", (0, height - HEAD_SPAN, 0), (0, shoulders_y, 0), NECK_RADIUS),
        cap(
            "shoulders",
            (-sw / 2 + SHOULDER_BAR_RADIUS, shoulders_y - 0.02, 0),
            (sw / 2 - SHOULDER_BAR_RADIUS, shoulders_y - 0.02, 0),
            SHOULDER_BAR_RADIUS,
        ),
        cap("chest", (0, hip_y + 0.62 * torso, 0), (0, shoulders_y - 0.04, 0), m["chest_radius"]),
        cap("waist", (0, hip_y + 0.32 * torso, 0), (0, hip_y + 0.62 * torso, 0), m["waist_radius"]),
        cap("pelvis", (0, hip_y - 0.02, 0), (0, hip_y + 0.34 * torso, 0), m["hip_radius"]),
    ]
    arm_dir = np.array([np.sin(theta), -np.cos(theta), 0.0])
    for side, s in (("l", -1.0), ("r", 1.0)):
        joint = np.array([s * sw / 2, shoulders_y - 0.02, 0.0])
        tip = joint + m["arm_length"] * arm_dir * np.array([s, 1.0, 1.0])
        caps.append(cap(f"arm_{side}", joint, tip, m["arm_radius"]))
        leg_x = s * 0.35 * m["hip_radius"]
        caps.append(cap(f"leg_{side}", (leg_x, hip_y, 0), (leg_x, 0.04, 0), m["leg_radius"]))

    measurements = {
        "height": height,
        "chest_circumference": 2 * np.pi * m["chest_radius"],
        "waist_circumference": 2 * np.pi * m["waist_radius"],
        "hip_circumference": 2 * np.pi * m["hip_radius"],
        "arm_length": m["arm_length"],
        "shoulders_y": shoulders_y,
        "hip_y": hip_y,
        "shoulder_width": sw,
        "arm_angle": theta,
    }
    return Mannequin(tuple(caps), pose, theta, measurements, b)


def shrink_to_skeleton(m: Mannequin, factor: float) -> Mannequin:
    """Scale every capsule radius by `factor` in (0,1]; axes stay put."""
    if not (0.0 < factor <= 1.0):
        raise ValueError(f"shrink factor must be in (0,1], got {factor}")
    caps = tuple(replace(c, radius=c.radius * factor) for c in m.capsules)
    return Mannequin(caps, m.pose, m.arm_angle, dict(m.measurements), m.body)


def sample_body(rng_seed: int) -> BodyShape:
    """Uniform body sample; deterministic per seed."""
    rng = np.random.default_rng(rng_seed)
    return BodyShape(rng.uniform(0.0, 1.0, size=10))


def torso_levels(meas: dict[str, float]) -> dict[str, float]:
    """Key torso heights implied by a physical measurement dict."""
    hip_y = meas["leg_length"]
    shoulders_y = meas["height"] - HEAD_SPAN - meas["neck_length"]
    torso = max(shoulders_y - hip_y, 0.05)
    return {
        "hip_y": hip_y,
        "shoulders_y": shoulders_y,
        "torso": torso,
        "pelvis_top": hip_y + 0.34 * torso,
        "waist_lo": hip_y + 0.32 * torso,
        "waist_hi": hip_y + 0.62 * torso,
    }


def effective_waist(meas: dict[str, float]) -> tuple[float, float]:
    """(height, circumference) of the body's narrowest wearable cross-section
    between the pelvis and the chest: what a waistband actually rests on.
    On bodies whose pelvis or chest cap spheres bury the nominal waist, this
    is wider than the waist measurement."""
    lv = torso_levels(meas)
    chest_lo = lv["hip_y"] + 0.62 * lv["torso"]
    ys = np.linspace(lv["hip_y"] + 0.35 * lv["torso"], lv["shoulders_y"] - 0.05, 64)
    best_y, best_r = ys[0], np.inf
    for y in ys:
        r = max(
            _segment_radius(y, lv["waist_lo"], lv["waist_hi"], meas["waist_radius"]),
            _segment_radius(y, lv["hip_y"] - 0.02, lv["pelvis_top"], meas["hip_radius"]),
            _segment_radius(y, chest_lo, lv["shoulders_y"] - 0.04, meas["chest_radius"]),
        )
        if r < best_r - 1e-12:
            best_y, best_r = y, r
    return float(best_y), float(2 * np.pi * best_r)


def waist_anchor_y(meas: dict[str, float]) -> float:
    """Waistband rest height: the effective (narrowest wearable) waist."""
    return effective_waist(meas)[0]


def _segment_radius(y: float, y0: float, y1: float, r: float) -> float:
    """Cross-section radius of a vertical capsule at height y (0 if outside)."""
    if y0 <= y <= y1:
        return r
    dy = (y0 - y) if y < y0 else (y - y1)
    if dy >= r:
        return 0.0
    return float(np.sqrt(r * r - dy * dy))


def lower_clearance_perimeter(meas: dict[str, float], y: float, pad: float = 0.0) -> float:
    """Horizontal cross-section perimeter of the lower body at height y
    (waist/pelvis capsules and the two-leg stadium), radii padded by `pad`.
    The minimum girth a garment ring must have to rest at y."""
    lv = torso_levels(meas)
    r_waist = _segment_radius(y, lv["waist_lo"], lv["waist_hi"], meas["waist_radius"] + pad)
    r_pelvis = _segment_radius(y, lv["hip_y"] - 0.02, lv["pelvis_top"], meas["hip_radius"] + pad)
    per = 2 * np.pi * max(r_waist, r_pelvis)
    r_leg = _segment_radius(y, 0.04, lv["hip_y"], meas["leg_radius"] + pad)
    if r_leg > 0:
        leg_sep = 0.35 * meas["hip_radius"]
        per = max(per, 2 * np.pi * r_leg + 4 * leg_sep)
    return float(per)
