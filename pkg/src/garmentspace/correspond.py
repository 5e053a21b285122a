"""Reference-topology remeshing and the shared UV parameterization.

Every simulated garment is remeshed onto one fixed reference topology per
garment type by locating reference vertices inside the source pattern
triangles and transferring 3D positions barycentrically. The common frame
is the pattern space of the all-0.5-parameter instance on the default
body; other instances are mapped into it panel-by-panel with a bounding-box
affine. UVs come straight from that frame, panels packed side by side, so
all instances of a type share identical texture coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mannequin import BodyShape
from .patterns import GarmentParams, GarmentType, PatternMesh, build_pattern_mesh, instantiate_pattern, param_count


class OutsideAllTriangles(Exception):
    """A reference vertex found no containing source triangle (strict mode)."""


@dataclass(eq=False)
class ReferenceTopology:
    """Fixed per-type topology all dataset meshes share."""

    gtype: GarmentType
    vertices_uv: np.ndarray  # (n,2) canonical pattern-space positions
    triangles: np.ndarray  # (m,3)
    panel_id: np.ndarray  # (n,)
    panel_names: tuple[str, ...]
    panel_bboxes: np.ndarray  # (p,4) minx,miny,maxx,maxy in canonical space
    target_edge: float
    _uv_cache: np.ndarray | None = field(default=None, repr=False)
    _uv_scale: float = 0.0

    @property
    def n_vertices(self) -> int:
        return len(self.vertices_uv)


@dataclass(eq=False)
class DrapedMesh:
    """3D garment on the reference topology (one row per reference vertex)."""

    positions: np.ndarray  # (n,3)
    gtype: GarmentType
    n_fallback: int = 0  # reference vertices resolved by nearest-edge projection


def _panel_bboxes(vertices: np.ndarray, panel_id: np.ndarray, n_panels: int) -> np.ndarray:
    out = np.empty((n_panels, 4))
    for p in range(n_panels):
        sel = vertices[panel_id == p]
        out[p] = (sel[:, 0].min(), sel[:, 1].min(), sel[:, 0].max(), sel[:, 1].max())
    return out


def build_reference(
    gtype: GarmentType, target_edge: float, seed: int = 0
) -> tuple[ReferenceTopology, PatternMesh]:
    """Reference topology from the canonical (all-0.5, default-body) instance."""
    g = GarmentParams(np.full(param_count(gtype), 0.5), np.full(3, 0.5))
    panels = instantiate_pattern(gtype, g, BodyShape.default())
    mesh = build_pattern_mesh(panels, target_edge, seed=seed)
    n_panels = len(mesh.panel_names)
    ref = ReferenceTopology(
        gtype=gtype,
        vertices_uv=mesh.vertices_2d.copy(),
        triangles=mesh.triangles.copy(),
        panel_id=mesh.source_panel.copy(),
        panel_names=mesh.panel_names,
        panel_bboxes=_panel_bboxes(mesh.vertices_2d, mesh.source_panel, n_panels),
        target_edge=target_edge,
    )
    return ref, mesh


def canonical_coords(pattern: PatternMesh, ref: ReferenceTopology) -> np.ndarray:
    """Map an instance's pattern vertices into the canonical frame
    (per-panel bounding-box affine)."""
    if pattern.panel_names != ref.panel_names:
        raise ValueError("pattern panels do not match the reference topology")
    src_bb = _panel_bboxes(pattern.vertices_2d, pattern.source_panel, len(ref.panel_names))
    out = np.empty_like(pattern.vertices_2d)
    for p in range(len(ref.panel_names)):
        sel = pattern.source_panel == p
        sx0, sy0, sx1, sy1 = src_bb[p]
        cx0, cy0, cx1, cy1 = ref.panel_bboxes[p]
        tx = (pattern.vertices_2d[sel, 0] - sx0) / max(sx1 - sx0, 1e-12)
        ty = (pattern.vertices_2d[sel, 1] - sy0) / max(sy1 - sy0, 1e-12)
        out[sel, 0] = cx0 + tx * (cx1 - cx0)
        out[sel, 1] = cy0 + ty * (cy1 - cy0)
    return out


def barycentric_weights(tri: np.ndarray, point: np.ndarray) -> np.ndarray:
    """2D barycentric coordinates of point w.r.t. triangle (3,2)."""
    a, b, c = tri
    m = np.array([[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]])
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if abs(det) < 1e-18:
        return np.array([np.inf, np.inf, np.inf])
    rhs = point - a
    w1 = (m[1, 1] * rhs[0] - m[0, 1] * rhs[1]) / det
    w2 = (-m[1, 0] * rhs[0] + m[0, 0] * rhs[1]) / det
    return np.array([1.0 - w1 - w2, w1, w2])


class _TriangleGrid:
    """Uniform-grid point location over one panel's triangles."""

    def __init__(self, verts: np.ndarray, tris: np.ndarray, cell: float):
        self.verts = verts
        self.tris = tris
        self.cell = cell
        self.x0 = verts[:, 0].min() - cell
        self.y0 = verts[:, 1].min() - cell
        self.buckets: dict[tuple[int, int], list[int]] = {}
        corners = verts[tris]  # (m,3,2)
        lo = np.floor((corners.min(axis=1) - [self.x0, self.y0]) / cell).astype(int)
        hi = np.floor((corners.max(axis=1) - [self.x0, self.y0]) / cell).astype(int)
        for t in range(len(tris)):
            for ix in range(lo[t, 0], hi[t, 0] + 1):
                for iy in range(lo[t, 1], hi[t, 1] + 1):
                    self.buckets.setdefault((ix, iy), []).append(t)

    def candidates(self, p: np.ndarray, ring: int = 0) -> list[int]:
        ix = int(np.floor((p[0] - self.x0) / self.cell))
        iy = int(np.floor((p[1] - self.y0) / self.cell))
        out: list[int] = []
        for dx in range(-ring, ring + 1):
            for dy in range(-ring, ring + 1):
                out.extend(self.buckets.get((ix + dx, iy + dy), ()))
        return out

    def locate(self, p: np.ndarray, tol: float = 1e-9) -> tuple[int, np.ndarray] | None:
        seen: set[int] = set()
        for ring in (0, 1, 2):
            for t in self.candidates(p, ring):
                if t in seen:
                    continue
                seen.add(t)
                w = barycentric_weights(self.verts[self.tris[t]], p)
                if w.min() >= -tol:
                    return t, w
        return None

    def nearest_edge(self, p: np.ndarray) -> tuple[int, np.ndarray]:
        """Clamped-barycentric projection onto the nearest triangle."""
        cand = self.candidates(p, 2) or list(range(len(self.tris)))
        best_t, best_w, best_d = -1, None, np.inf
        for t in set(cand):
            tri = self.verts[self.tris[t]]
            w = np.clip(barycentric_weights(tri, p), 0.0, 1.0)
            s = w.sum()
            if not np.isfinite(s) or s <= 0:
                continue
            w = w / s
            q = w @ tri
            d = float(np.hypot(*(q - p)))
            if d < best_d:
                best_t, best_w, best_d = t, w, d
        return best_t, best_w


def remesh_to_reference(
    raw, ref: ReferenceTopology, strict: bool = False
) -> DrapedMesh:
    """Transfer a drape result onto the reference topology.

    Reference vertices outside every source triangle (beyond tolerance) fall
    back to a nearest-edge projection and are counted in n_fallback; strict
    mode raises OutsideAllTriangles instead.
    """
    pattern: PatternMesh = raw.pattern
    canon = canonical_coords(pattern, ref)
    positions3d = raw.positions
    out = np.empty((ref.n_vertices, 3))
    n_fallback = 0
    for p in range(len(ref.panel_names)):
        tri_sel = np.where(pattern.source_panel[pattern.triangles[:, 0]] == p)[0]
        tris = pattern.triangles[tri_sel]
        grid = _TriangleGrid(canon, tris, cell=2.0 * pattern.target_edge)
        for vi in np.where(ref.panel_id == p)[0]:
            q = ref.vertices_uv[vi]
            hit = grid.locate(q)
            if hit is None:
                if strict:
                    raise OutsideAllTriangles(f"reference vertex {vi} not contained in any source triangle")
                t, w = grid.nearest_edge(q)
                n_fallback += 1
            else:
                t, w = hit
            out[vi] = w @ positions3d[tris[t]]
    return DrapedMesh(out, ref.gtype, n_fallback)


def uv_of(ref: ReferenceTopology) -> np.ndarray:
    """Per-vertex UV in [0,1]^2, panels packed left-to-right, shared scale.

    Fixed per garment type; ref.uv_scale afterwards holds meters-per-uv-unit
    so texel stretch can be measured in physical units.
    """
    if ref._uv_cache is not None:
        return ref._uv_cache
    margin = 0.02
    widths = ref.panel_bboxes[:, 2] - ref.panel_bboxes[:, 0]
    heights = ref.panel_bboxes[:, 3] - ref.panel_bboxes[:, 1]
    total_w = widths.sum() + margin * (len(widths) + 1)
    max_h = heights.max() + 2 * margin
    scale = 1.0 / max(total_w, max_h)  # meters -> uv, uniform over panels
    uv = np.empty_like(ref.vertices_uv)
    x_cursor = margin
    for p in range(len(ref.panel_names)):
        sel = ref.panel_id == p
        x0, y0 = ref.panel_bboxes[p, 0], ref.panel_bboxes[p, 1]
        uv[sel, 0] = (ref.vertices_uv[sel, 0] - x0 + x_cursor) * scale
        uv[sel, 1] = (ref.vertices_uv[sel, 1] - y0 + margin) * scale
        x_cursor += widths[p] + margin
    ref._uv_cache = uv
    ref._uv_scale = 1.0 / scale
    return uv
