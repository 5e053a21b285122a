"""Parametric 2D sewing patterns for shirts, skirts, and kimonos.

Each garment type is a fixed panel topology whose dimensions come from a
normalized parameter vector denormalized through the range table below and
scaled to the target body (vertical dims follow body height, horizontal
dims follow chest circumference, sleeve dims follow arm length). The
parameter-to-measurement mapping is this repo's documented convention; see
docs/data_format.md.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay
from shapely import contains_xy
from shapely.geometry import Polygon

from .mannequin import (
    BodyShape,
    DEFAULT_ARM_LENGTH,
    DEFAULT_CHEST_CIRCUMFERENCE,
    DEFAULT_HEIGHT,
    DEFAULT_WAIST_RADIUS,
    effective_waist,
    lower_clearance_perimeter,
    waist_anchor_y,
)


class PatternError(Exception):
    pass


class DegeneratePanel(PatternError):
    """A denormalized panel has a non-positive edge."""


class TriangulationFailure(PatternError):
    """The panel polygon could not be meshed at the requested resolution."""


class GarmentType(enum.Enum):
    SHIRT = "shirt"
    SKIRT = "skirt"
    KIMONO = "kimono"


# Axis tags: v = scales with body height, h = with chest circumference,
# a = with arm length, w = with waist circumference (waistband dims must
# track the waist, not the chest, to stay wearable), u = unitless.
# Ranges are meters on the default body (all body entries at 0.5).
RANGE_TABLES: dict[GarmentType, tuple[tuple[str, float, float, str], ...]] = {
    GarmentType.SKIRT: (
        ("waist_width", 0.393, 0.407, "w"),
        ("hem_width", 0.45, 0.85, "h"),
        ("length", 0.35, 0.80, "v"),
        ("side_bow", 0.00, 0.06, "h"),
        ("flare_start", 0.30, 0.80, "u"),
        ("front_hem_curve", -0.05, 0.05, "v"),
        ("back_hem_curve", -0.05, 0.05, "v"),
        ("front_waist_curve", -0.04, 0.04, "v"),
        ("back_waist_curve", -0.04, 0.04, "v"),
        ("waist_ease", 0.00, 0.006, "w"),
        ("hem_tilt", -0.06, 0.06, "v"),
    ),
    GarmentType.SHIRT: (
        ("body_width", 0.46, 0.62, "h"),
        ("body_length", 0.55, 0.85, "v"),
        ("armhole_depth", 0.18, 0.26, "v"),
        ("neck_width", 0.16, 0.22, "h"),
        ("front_neck_drop", 0.06, 0.12, "v"),
        ("back_neck_drop", 0.02, 0.05, "v"),
        ("shoulder_width", 0.36, 0.44, "h"),
        ("sleeve_length", 0.15, 0.60, "a"),
        ("cuff_width", 0.33, 0.45, "h"),
    ),
    GarmentType.KIMONO: (
        ("body_width", 0.50, 0.70, "h"),
        ("length", 0.60, 0.95, "v"),
        ("half_span", 0.55, 0.85, "a"),
        ("sleeve_depth", 0.18, 0.30, "v"),
    ),
}

MATERIAL_NAMES = ("stretch", "bend", "shear")

# Kimono fixed proportions (the 4 free params cover size/reach only).
KIMONO_NECK_FRACTION = 0.30  # neck width as a fraction of body width
KIMONO_FRONT_DROP_FRACTION = 0.14  # front neck drop as a fraction of length
KIMONO_BACK_DROP_FRACTION = 0.04

CURVE_SEGMENTS = 16  # fixed discretization of curved boundary edges


def param_count(gtype: GarmentType) -> int:
    """Shape-dimension count for a garment type (materials excluded)."""
    return len(RANGE_TABLES[gtype])


@dataclass(frozen=True, eq=False)
class GarmentParams:
    """Normalized garment parameters: shape dims plus 3 material stiffnesses."""

    shape_dims: np.ndarray
    material: np.ndarray

    def __post_init__(self):
        sd = np.asarray(self.shape_dims, dtype=np.float64)
        mt = np.asarray(self.material, dtype=np.float64)
        if mt.shape != (3,):
            raise ValueError("material must have 3 entries (stretch, bend, shear)")
        for arr, what in ((sd, "shape_dims"), (mt, "material")):
            if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
                raise ValueError(f"{what} entries must lie in [0,1]")
        object.__setattr__(self, "shape_dims", sd)
        object.__setattr__(self, "material", mt)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.shape_dims, self.material])


def sample_params(gtype: GarmentType, rng_seed: int) -> GarmentParams:
    """Uniform sample of a garment parameter vector; deterministic per seed."""
    rng = np.random.default_rng(rng_seed)
    return GarmentParams(
        rng.uniform(0.0, 1.0, size=param_count(gtype)),
        rng.uniform(0.0, 1.0, size=3),
    )


@dataclass(frozen=True)
class SeamTag:
    """A labeled boundary range [start, end] (vertex indices, inclusive)
    stitched to `partner` ("panel:label"). Empty partner = pin-only range."""

    label: str
    start: int
    end: int
    partner: str = ""
    reverse: bool = False


@dataclass(frozen=True, eq=False)
class PatternPanel:
    """Closed 2D boundary polyline (meters) with labeled seam/pin ranges."""

    name: str
    boundary: np.ndarray  # (n,2), implicitly closed, CCW
    seam_tags: tuple[SeamTag, ...] = ()
    pin_tags: tuple[SeamTag, ...] = ()

    def segment_points(self, tag: SeamTag) -> np.ndarray:
        if tag.end >= len(self.boundary):  # wraps back to the first vertex
            return np.concatenate([self.boundary[tag.start :], self.boundary[:1]])
        return self.boundary[tag.start : tag.end + 1]

    def edge_lengths(self) -> np.ndarray:
        rolled = np.roll(self.boundary, -1, axis=0)
        return np.linalg.norm(rolled - self.boundary, axis=1)

    def arc_length(self, tag: SeamTag) -> float:
        pts = self.segment_points(tag)
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


@dataclass(eq=False)
class PatternMesh:
    """Simulation-ready triangulation of one or more panels.

    seam_vertex_pairs index into the merged vertex array; every seam vertex
    appears in exactly one pair. pinned_vertices are drape-protocol
    attachment points (waistband / shoulder seam).
    """

    vertices_2d: np.ndarray  # (n,2)
    triangles: np.ndarray  # (m,3)
    seam_vertex_pairs: np.ndarray  # (s,2)
    source_panel: np.ndarray  # (n,) panel index per vertex
    panel_names: tuple[str, ...]
    boundary_vertex_count: int  # boundary verts come first, per panel
    pinned_vertices: np.ndarray  # (p,) indices
    target_edge: float

    def mean_edge_length(self) -> float:
        e = _unique_edges(self.triangles)
        return float(np.linalg.norm(self.vertices_2d[e[:, 0]] - self.vertices_2d[e[:, 1]], axis=1).mean())


def denormalize(gtype: GarmentType, g: GarmentParams, b: BodyShape, table=None) -> dict[str, float]:
    """Map normalized shape dims to physical panel measurements for a body."""
    table = RANGE_TABLES[gtype] if table is None else table
    if len(g.shape_dims) != len(table):
        raise ValueError(
            f"{gtype.value} expects {len(table)} shape dims, got {len(g.shape_dims)}"
        )
    meas = b.physical()
    scale = {
        "v": meas["height"] / DEFAULT_HEIGHT,
        "h": (2 * np.pi * meas["chest_radius"]) / DEFAULT_CHEST_CIRCUMFERENCE,
        "a": meas["arm_length"] / DEFAULT_ARM_LENGTH,
        "w": effective_waist(meas)[1] / (2 * np.pi * DEFAULT_WAIST_RADIUS),
        "u": 1.0,
    }
    out = {}
    for (name, lo, hi, axis), t in zip(table, g.shape_dims):
        out[name] = (lo + float(t) * (hi - lo)) * scale[axis]
    return out


def _curve(a, b, depth: float, n: int = CURVE_SEGMENTS, bump=None) -> np.ndarray:
    """Points from a to b (exclusive of b) bulged by `depth` along the left
    normal of the chord. `bump` maps t in [0,1] to the bulge profile."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    t = np.linspace(0.0, 1.0, n + 1)[:-1]
    chord = b - a
    normal = np.array([-chord[1], chord[0]])
    nl = np.linalg.norm(normal)
    if nl < 1e-12:
        raise DegeneratePanel("zero-length boundary edge")
    normal /= nl
    prof = 4.0 * t * (1.0 - t) if bump is None else bump(t)
    return a[None] + t[:, None] * chord[None] + depth * prof[:, None] * normal[None]


def _peaked_bump(peak: float):
    peak = min(max(peak, 0.05), 0.95)

    def f(t):
        lo = np.sin(np.pi * t / (2 * peak)) ** 2
        hi = np.sin(np.pi * (1 - t) / (2 * (1 - peak))) ** 2
        return np.where(t < peak, lo, hi)

    return f


class _Builder:
    """Accumulates boundary points and named index ranges for one panel."""

    def __init__(self, name: str):
        self.name = name
        self.points: list[np.ndarray] = []
        self.ranges: dict[str, tuple[int, int]] = {}

    def add(self, pts: np.ndarray, label: str | None = None):
        start = sum(len(p) for p in self.points)
        self.points.append(np.atleast_2d(pts))
        if label:
            # inclusive end: segment reaches the first point of the next run
            self.ranges[label] = (start, start + len(np.atleast_2d(pts)))
        return self

    def finish(self, seams: dict[str, tuple[str, bool]], pins: tuple[str, ...] = ()) -> PatternPanel:
        boundary = np.concatenate(self.points)
        seam_tags = []
        for label, (partner, reverse) in seams.items():
            s, e = self.ranges[label]
            seam_tags.append(SeamTag(label, s, e, partner, reverse))
        pin_tags = []
        for label in pins:
            s, e = self.ranges[label]
            pin_tags.append(SeamTag(label, s, e))
        if np.any(np.linalg.norm(np.roll(boundary, -1, axis=0) - boundary, axis=1) <= 1e-9):
            raise DegeneratePanel(f"panel {self.name}: zero-length boundary edge")
        return PatternPanel(self.name, boundary, tuple(seam_tags), tuple(pin_tags))


def _skirt_panels(d: dict[str, float], meas: dict[str, float]) -> list[PatternPanel]:
    ww = d["waist_width"] + d["waist_ease"]
    hw, length, tilt = d["hem_width"], d["length"], d["hem_tilt"]
    bump = _peaked_bump(d["flare_start"])
    # drafting rule: the pattern clears the hip cross-section (plus ease)
    # over the hip band below the waistline, whatever the style says
    anchor = waist_anchor_y(meas)
    # Fabric below the waistband follows the body surface, so drafted depth
    # is surface arc length, not vertical drop: integrate the profile once
    # and evaluate girth at the height the fabric actually reaches.
    ys = np.linspace(anchor, anchor - (length + 0.06), 160)
    pers = np.array([lower_clearance_perimeter(meas, y, pad=0.009) for y in ys])
    radii = pers / (2 * np.pi)
    seg = np.sqrt(np.diff(ys) ** 2 + np.diff(radii) ** 2)
    arc = np.concatenate([[0.0], np.cumsum(seg)])

    def need_at(depth: np.ndarray) -> np.ndarray:
        d = np.atleast_1d(depth)
        per = np.interp(d, arc, pers)
        ramp = np.clip((d - 0.01) / 0.01, 0.0, 1.0)  # waist corner keeps its width
        return per * 1.03 / 4 * ramp

    hw = max(hw, 2 * float(need_at(np.asarray([length]))[0]) + 0.01)

    def hip_clear(pts: np.ndarray) -> np.ndarray:
        out = pts.copy()
        need = need_at(length - out[:, 1])
        sign = np.where(out[:, 0] >= 0, 1.0, -1.0)
        out[:, 0] = np.where(np.abs(out[:, 0]) < need, sign * need, out[:, 0])
        return out

    panels = []
    for side, wc, hc in (("front", d["front_waist_curve"], d["front_hem_curve"]),
                         ("back", d["back_waist_curve"], d["back_hem_curve"])):
        if min(ww, hw, length) <= 0:
            raise DegeneratePanel(f"skirt {side}: non-positive dimension")
        # CCW: hem left->right, side right up, waist right->left, side left down
        hem_l = np.array([-hw / 2, tilt])
        hem_r = np.array([hw / 2, -tilt])
        waist_r = np.array([ww / 2, length])
        waist_l = np.array([-ww / 2, length])
        b = _Builder(f"{side}")
        b.add(_curve(hem_l, hem_r, -hc), "hem")
        # dense side sampling: the hip-clearance profile is steep and chords
        # of a coarse polyline would cut inside the body
        b.add(hip_clear(_curve(hem_r, waist_r, d["side_bow"], n=64, bump=bump)), "side_r")
        b.add(_curve(waist_r, waist_l, wc), "waist")
        b.add(hip_clear(_curve(waist_l, hem_l, d["side_bow"], n=64, bump=bump)), "side_l")
        other = "back" if side == "front" else "front"
        panels.append(
            b.finish(
                seams={"side_r": (f"{other}:side_r", False), "side_l": (f"{other}:side_l", False)},
                pins=("waist",),
            )
        )
    return panels


def _shirt_panels(d: dict[str, float], meas: dict[str, float]) -> list[PatternPanel]:
    W, L, A = d["body_width"], d["body_length"], d["armhole_depth"]
    n, wsh = d["neck_width"], d["shoulder_width"]
    if not (n < wsh < W):
        raise DegeneratePanel("shirt: requires neck_width < shoulder_width < body_width")
    if L <= A:
        raise DegeneratePanel("shirt: body_length must exceed armhole_depth")
    armhole_len = float(np.hypot((W - wsh) / 2, A))
    cap = 2.0 * armhole_len
    S, cuff = d["sleeve_length"], d["cuff_width"]
    panels = []
    for side, drop in (("front", d["front_neck_drop"]), ("back", d["back_neck_drop"])):
        other = "back" if side == "front" else "front"
        b = _Builder(side)
        b.add(_curve([-W / 2, 0], [W / 2, 0], 0.0), "hem")
        b.add(_curve([W / 2, 0], [W / 2, L - A], 0.0), "side_r")
        b.add(_curve([W / 2, L - A], [wsh / 2, L], 0.0), "armhole_r")
        b.add(_curve([wsh / 2, L], [n / 2, L], 0.0), "shoulder_r")
        b.add(_curve([n / 2, L], [-n / 2, L], drop), "neck")
        b.add(_curve([-n / 2, L], [-wsh / 2, L], 0.0), "shoulder_l")
        b.add(_curve([-wsh / 2, L], [-W / 2, L - A], 0.0), "armhole_l")
        b.add(_curve([-W / 2, L - A], [-W / 2, 0], 0.0), "side_l")
        sleeve = {"front": ("sleeve_r:cap_front", "sleeve_l:cap_front"),
                  "back": ("sleeve_r:cap_back", "sleeve_l:cap_back")}[side]
        panels.append(
            b.finish(
                seams={
                    "side_r": (f"{other}:side_r", False),
                    "side_l": (f"{other}:side_l", False),
                    "shoulder_r": (f"{other}:shoulder_r", False),
                    "shoulder_l": (f"{other}:shoulder_l", False),
                    "armhole_r": (sleeve[0], side == "back"),
                    "armhole_l": (sleeve[1], side == "front"),
                },
                pins=("shoulder_r", "shoulder_l"),
            )
        )
    for arm in ("sleeve_l", "sleeve_r"):
        b = _Builder(arm)
        b.add(_curve([-cuff / 2, 0], [cuff / 2, 0], 0.0), "cuff")
        b.add(_curve([cuff / 2, 0], [cap / 2, S], 0.0), "underarm_a")
        b.add(_curve([cap / 2, S], [0, S], 0.0), "cap_front")
        b.add(_curve([0, S], [-cap / 2, S], 0.0), "cap_back")
        b.add(_curve([-cap / 2, S], [-cuff / 2, 0], 0.0), "underarm_b")
        hole = "armhole_l" if arm == "sleeve_l" else "armhole_r"
        panels.append(
            b.finish(
                seams={
                    "underarm_a": (f"{arm}:underarm_b", True),
                    "underarm_b": (f"{arm}:underarm_a", True),
                    "cap_front": (f"front:{hole}", arm == "sleeve_r"),
                    "cap_back": (f"back:{hole}", arm == "sleeve_l"),
                }
            )
        )
    return panels


def _kimono_panels(d: dict[str, float], meas: dict[str, float]) -> list[PatternPanel]:
    W, L = d["body_width"], d["length"]
    span, D = d["half_span"], d["sleeve_depth"]
    if span <= W / 2:
        raise DegeneratePanel("kimono: half_span must exceed half body width")
    if L <= D:
        raise DegeneratePanel("kimono: length must exceed sleeve_depth")
    n = KIMONO_NECK_FRACTION * W
    panels = []
    for side, drop_f in (("front", KIMONO_FRONT_DROP_FRACTION), ("back", KIMONO_BACK_DROP_FRACTION)):
        other = "back" if side == "front" else "front"
        drop = drop_f * L
        b = _Builder(side)
        b.add(_curve([-W / 2, 0], [W / 2, 0], 0.0), "hem")
        b.add(_curve([W / 2, 0], [W / 2, L - D], 0.0), "side_r")
        b.add(_curve([W / 2, L - D], [span, L - D], 0.0), "underarm_r")
        b.add(_curve([span, L - D], [span, L], 0.0), "cuff_r")
        b.add(_curve([span, L], [n / 2, L], 0.0), "top_r")
        b.add(_curve([n / 2, L], [-n / 2, L], drop), "neck")
        b.add(_curve([-n / 2, L], [-span, L], 0.0), "top_l")
        b.add(_curve([-span, L], [-span, L - D], 0.0), "cuff_l")
        b.add(_curve([-span, L - D], [-W / 2, L - D], 0.0), "underarm_l")
        b.add(_curve([-W / 2, L - D], [-W / 2, 0], 0.0), "side_l")
        panels.append(
            b.finish(
                seams={
                    "side_r": (f"{other}:side_r", False),
                    "side_l": (f"{other}:side_l", False),
                    "underarm_r": (f"{other}:underarm_r", False),
                    "underarm_l": (f"{other}:underarm_l", False),
                    "top_r": (f"{other}:top_r", False),
                    "top_l": (f"{other}:top_l", False),
                },
                pins=("top_r", "top_l"),
            )
        )
    return panels


_PANEL_BUILDERS = {
    GarmentType.SKIRT: _skirt_panels,
    GarmentType.SHIRT: _shirt_panels,
    GarmentType.KIMONO: _kimono_panels,
}


def instantiate_pattern(
    gtype: GarmentType, g: GarmentParams, b: BodyShape, table=None
) -> list[PatternPanel]:
    """Panels for (garment, body); raises DegeneratePanel on collapsed edges."""
    dims = denormalize(gtype, g, b, table=table)
    panels = _PANEL_BUILDERS[gtype](dims, b.physical())
    for p in panels:
        if np.any(p.edge_lengths() <= 1e-9):
            raise DegeneratePanel(f"panel {p.name} has a zero-length edge")
        if not Polygon(p.boundary).is_simple:
            raise DegeneratePanel(f"panel {p.name} boundary self-intersects")
    return panels


# ---------------------------------------------------------------------------
# Triangulation: boundary-resampled Delaunay + Lloyd relaxation (fixed 20
# iterations), a centroidal-Voronoi stand-in that is isotropic enough here.

LLOYD_ITERATIONS = 20


def _resample_polyline(pts: np.ndarray, n_pieces: int) -> np.ndarray:
    """n_pieces+1 points uniformly by arc length along pts (keeps endpoints)."""
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    s = np.linspace(0.0, total, n_pieces + 1)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    t = (s - cum[idx]) / np.maximum(seg[idx], 1e-18)
    out = pts[idx] + t[:, None] * (pts[idx + 1] - pts[idx])
    out[0], out[-1] = pts[0], pts[-1]
    return out


def _discretize_panel(
    panel: PatternPanel, target_edge: float, seam_counts: dict[str, int] | None = None
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Resample panel boundary at ~target_edge spacing.

    Tagged (seam/pin) ranges are resampled with an explicit piece count so
    partner seams across panels get identical counts; returns the boundary
    ring and per-label index arrays into it.
    """
    tags = sorted(
        list(panel.seam_tags) + [t for t in panel.pin_tags if all(t.label != s.label for s in panel.seam_tags)],
        key=lambda t: t.start,
    )
    n_total = len(panel.boundary)
    pieces: list[tuple[int, int, str | None]] = []
    cursor = 0
    for t in tags:
        if t.start > cursor:
            pieces.append((cursor, t.start, None))
        pieces.append((t.start, t.end, t.label))
        cursor = t.end
    if cursor < n_total:
        pieces.append((cursor, n_total, None))

    ring: list[np.ndarray] = []
    labels: dict[str, np.ndarray] = {}
    for start, end, label in pieces:
        pts = panel.boundary[start : end + 1]
        if end >= n_total:  # wraps back to the first vertex
            pts = np.concatenate([panel.boundary[start:], panel.boundary[:1]])
        arclen = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
        n_pieces = max(2, int(round(arclen / target_edge)))
        if label and seam_counts and label in seam_counts:
            n_pieces = seam_counts[label]
        res = _resample_polyline(pts, n_pieces)
        base = sum(len(r) for r in ring)
        if label:
            labels[label] = np.arange(base, base + n_pieces + 1)
        ring.append(res[:-1])  # last point == next piece's first
    boundary = np.concatenate(ring)
    for k, idx in labels.items():
        labels[k] = idx % len(boundary)
    return boundary, labels


def _unique_edges(triangles: np.ndarray) -> np.ndarray:
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def _triangulate_ring(
    boundary: np.ndarray, target_edge: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Mesh the polygon bounded by `boundary` (kept fixed); returns
    (vertices with boundary first, triangles)."""
    poly = Polygon(boundary)
    if not poly.is_valid or poly.area <= 0:
        raise TriangulationFailure("boundary polygon is invalid")
    minx, miny, maxx, maxy = poly.bounds
    if min(maxx - minx, maxy - miny) < 1.2 * target_edge:
        raise TriangulationFailure("panel smaller than the requested edge length")

    rng = np.random.default_rng(seed)
    inner = poly.buffer(-0.45 * target_edge)
    sx = 0.95 * target_edge
    sy = 0.95 * target_edge * np.sqrt(3) / 2
    cy = 0.5 * (miny + maxy)
    cx = 0.5 * (minx + maxx)
    n_rows = int(np.ceil((maxy - miny) / sy)) + 1
    rows = cy + sy * (np.arange(n_rows) - (n_rows - 1) / 2)
    n_cols = int(np.ceil((maxx - minx) / sx)) + 1
    pts = []
    for i, y in enumerate(rows):
        xs = cx + sx * (np.arange(n_cols) - (n_cols - 1) / 2) + (0.25 * sx if i % 2 else -0.25 * sx)
        pts.append(np.stack([xs, np.full_like(xs, y)], axis=1))
    lattice = np.concatenate(pts) if pts else np.zeros((0, 2))
    if len(lattice):
        lattice = lattice + rng.uniform(-0.12, 0.12, size=lattice.shape) * target_edge
        keep = contains_xy(inner, lattice[:, 0], lattice[:, 1])
        interior = lattice[keep]
    else:
        interior = np.zeros((0, 2))

    nb = len(boundary)
    points = np.concatenate([boundary, interior])

    def build(points):
        if len(points) < 3:
            raise TriangulationFailure("not enough points to mesh")
        tri = Delaunay(points)
        cent = points[tri.simplices].mean(axis=1)
        keep = contains_xy(poly, cent[:, 0], cent[:, 1])
        return tri.simplices[keep]

    for _ in range(LLOYD_ITERATIONS):
        simplices = build(points)
        if len(interior) == 0:
            break
        v0, v1, v2 = (points[simplices[:, k]] for k in range(3))
        area = np.abs(np.cross(v1 - v0, v2 - v0)) / 2
        centroid = (v0 + v1 + v2) / 3
        acc = np.zeros_like(points)
        wsum = np.zeros(len(points))
        for k in range(3):
            np.add.at(acc, simplices[:, k], centroid * area[:, None])
            np.add.at(wsum, simplices[:, k], area)
        moved = acc[nb:] / np.maximum(wsum[nb:], 1e-18)[:, None]
        ok = contains_xy(inner, moved[:, 0], moved[:, 1])
        points[nb:][ok] = moved[ok]

    simplices = build(points)
    # drop interior points orphaned by the final filter
    used = np.zeros(len(points), dtype=bool)
    used[simplices.ravel()] = True
    used[:nb] = True
    remap = np.cumsum(used) - 1
    points = points[used]
    simplices = remap[simplices]

    # consistent CCW orientation
    v0, v1, v2 = (points[simplices[:, k]] for k in range(3))
    flips = (v1 - v0)[:, 0] * (v2 - v0)[:, 1] - (v1 - v0)[:, 1] * (v2 - v0)[:, 0] < 0
    simplices[flips] = simplices[flips][:, [0, 2, 1]]

    # the boundary ring must survive as mesh boundary
    edges = set(map(tuple, _unique_edges(simplices)))
    for i in range(nb):
        a, bb = i, (i + 1) % nb
        if (min(a, bb), max(a, bb)) not in edges:
            raise TriangulationFailure("triangulation does not conform to the panel boundary")
    return points, simplices


def triangulate(
    panel: PatternPanel, target_edge: float, seed: int = 0, _seam_counts=None
) -> PatternMesh:
    """Isotropic mesh of a single panel; deterministic per seed."""
    if target_edge <= 0:
        raise ValueError("target_edge must be positive")
    boundary, labels = _discretize_panel(panel, target_edge, _seam_counts)
    last_err = None
    for attempt in range(3):
        try:
            points, tris = _triangulate_ring(boundary, target_edge, seed + 1000 * attempt)
            break
        except TriangulationFailure as err:
            last_err = err
            if "smaller than" in str(err) or "invalid" in str(err):
                raise
    else:
        raise last_err
    pairs = _self_seam_pairs(panel, labels)
    pinned = np.unique(np.concatenate([labels[t.label] for t in panel.pin_tags])) if panel.pin_tags else np.zeros(0, dtype=np.int64)
    mesh = PatternMesh(
        vertices_2d=points,
        triangles=tris,
        seam_vertex_pairs=pairs,
        source_panel=np.zeros(len(points), dtype=np.int64),
        panel_names=(panel.name,),
        boundary_vertex_count=len(boundary),
        pinned_vertices=pinned.astype(np.int64),
        target_edge=target_edge,
    )
    mesh._seam_labels = {f"{panel.name}:{k}": v for k, v in labels.items()}  # type: ignore[attr-defined]
    return mesh


def _self_seam_pairs(panel: PatternPanel, labels: dict[str, np.ndarray]) -> np.ndarray:
    pairs = []
    seen = set()
    for t in panel.seam_tags:
        pname, plabel = t.partner.split(":") if ":" in t.partner else ("", "")
        if pname != panel.name or t.label in seen or plabel in seen:
            continue
        a, b = labels[t.label], labels[plabel]
        if len(a) != len(b):
            raise PatternError(f"self-seam {t.label} count mismatch")
        b = b[::-1] if t.reverse else b
        pairs.append(np.stack([a, b], axis=1))
        seen.update({t.label, plabel})
    return np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=np.int64)


def build_pattern_mesh(
    panels: list[PatternPanel], target_edge: float, seed: int = 0
) -> PatternMesh:
    """Triangulate all panels and merge them with cross-panel seam pairs."""
    # force identical piece counts on partnered seams
    counts: dict[str, int] = {}
    by_name = {p.name: p for p in panels}
    for p in panels:
        for t in p.seam_tags:
            key = f"{p.name}:{t.label}"
            if t.partner and t.partner in counts:
                counts[key] = counts[t.partner]
            else:
                arclen = p.arc_length(t)
                counts[key] = max(2, int(round(arclen / target_edge)))
    meshes = []
    for i, p in enumerate(panels):
        local = {t.label: counts[f"{p.name}:{t.label}"] for t in p.seam_tags}
        meshes.append(triangulate(p, target_edge, seed=seed + i, _seam_counts=local))

    offsets = np.cumsum([0] + [len(m.vertices_2d) for m in meshes])
    verts = np.concatenate([m.vertices_2d for m in meshes])
    tris = np.concatenate([m.triangles + off for m, off in zip(meshes, offsets)])
    panel_ids = np.concatenate(
        [np.full(len(m.vertices_2d), i, dtype=np.int64) for i, m in enumerate(meshes)]
    )
    pinned = np.concatenate([m.pinned_vertices + off for m, off in zip(meshes, offsets)])

    label_index: dict[str, np.ndarray] = {}
    for m, off in zip(meshes, offsets):
        for key, idx in m._seam_labels.items():  # type: ignore[attr-defined]
            label_index[key] = idx + off

    pairs = []
    seen: set[str] = set()
    for p in panels:
        for t in p.seam_tags:
            key = f"{p.name}:{t.label}"
            if key in seen or not t.partner or t.partner in seen:
                continue
            pname = t.partner.split(":")[0]
            if pname == p.name:
                # self seams were paired inside triangulate()
                i = [q.name for q in panels].index(p.name)
                local = meshes[i].seam_vertex_pairs + offsets[i]
                if len(local):
                    pairs.append(local)
                seen.update({key, t.partner})
                continue
            a, b = label_index[key], label_index[t.partner]
            if len(a) != len(b):
                raise PatternError(f"seam {key} <-> {t.partner}: count mismatch")
            b = b[::-1] if t.reverse else b
            pairs.append(np.stack([a, b], axis=1))
            seen.update({key, t.partner})
    seam_pairs = np.concatenate(pairs).astype(np.int64) if pairs else np.zeros((0, 2), dtype=np.int64)
    # seams sharing a corner vertex (e.g. underarm) would stitch it twice;
    # keep the first pair per vertex so each appears in exactly one pair
    taken: set[int] = set()
    kept = []
    for a, b in seam_pairs:
        if a == b or a in taken or b in taken:
            continue
        taken.update((int(a), int(b)))
        kept.append((a, b))
    seam_pairs = np.asarray(kept, dtype=np.int64) if kept else np.zeros((0, 2), dtype=np.int64)

    mesh = PatternMesh(
        vertices_2d=verts,
        triangles=tris,
        seam_vertex_pairs=seam_pairs,
        source_panel=panel_ids,
        panel_names=tuple(p.name for p in panels),
        boundary_vertex_count=sum(m.boundary_vertex_count for m in meshes),
        pinned_vertices=pinned,
        target_edge=target_edge,
    )
    mesh._per_panel_boundary_counts = tuple(m.boundary_vertex_count for m in meshes)  # type: ignore[attr-defined]
    mesh._seam_labels = label_index  # type: ignore[attr-defined]
    return mesh


# ---------------------------------------------------------------------------
# Versioned text serialization of panels.

PANEL_FORMAT_VERSION = 1


def panels_to_text(panels: list[PatternPanel]) -> str:
    out = io.StringIO()
    out.write(f"garmentspace-panels v{PANEL_FORMAT_VERSION}\n")
    for p in panels:
        out.write(f"panel {p.name} {len(p.boundary)}\n")
        for x, y in p.boundary:
            out.write(f"{x:.12g} {y:.12g}\n")
        for t in p.seam_tags:
            out.write(f"seam {t.label} {t.start} {t.end} {t.partner or '-'} {int(t.reverse)}\n")
        for t in p.pin_tags:
            out.write(f"pin {t.label} {t.start} {t.end}\n")
    return out.getvalue()


def panels_from_text(text: str) -> list[PatternPanel]:
    lines = text.strip().splitlines()
    header = lines[0].split()
    if header[0] != "garmentspace-panels" or not header[1].startswith("v"):
        raise PatternError("not a garmentspace panel file")
    if int(header[1][1:]) > PANEL_FORMAT_VERSION:
        raise PatternError("panel file version is newer than supported")
    panels = []
    i = 1
    while i < len(lines):
        tok = lines[i].split()
        if tok[0] != "panel":
            raise PatternError(f"expected 'panel' at line {i + 1}")
        name, count = tok[1], int(tok[2])
        boundary = np.array([[float(v) for v in lines[i + 1 + k].split()] for k in range(count)])
        i += 1 + count
        seams, pins = [], []
        while i < len(lines) and lines[i].split()[0] in ("seam", "pin"):
            tok = lines[i].split()
            if tok[0] == "seam":
                seams.append(SeamTag(tok[1], int(tok[2]), int(tok[3]), "" if tok[4] == "-" else tok[4], bool(int(tok[5]))))
            else:
                pins.append(SeamTag(tok[1], int(tok[2]), int(tok[3])))
            i += 1
        panels.append(PatternPanel(name, boundary, tuple(seams), tuple(pins)))
    return panels
