"""Sketch rendering, augmentation, and HOG descriptors.

Sketches are 224x224 grayscale, white background with dark strokes, drawn
from a fixed frontal orthographic camera. Strokes are silhouette edges
(front/back facing flips plus mesh boundary) and crease edges (dihedral
angle above a threshold), depth-tested against the garment's own surface.

The descriptor is a block-normalized histogram of oriented gradients:
9 unsigned orientation bins, 16-px cells, 2x2-cell blocks at stride 2,
giving 7*7*36 = 1764 entries. Its L2 distance doubles as the training
target for the style embedding.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from numba import njit
from PIL import Image
from scipy import ndimage
from scipy.signal import find_peaks

SKETCH_SIZE = 224
HOG_ORIENTATIONS = 9
HOG_CELL = 16
HOG_BLOCK = 2  # cells per block side, stride = block (no overlap)
CREASE_THRESHOLD_DEG = 60.0
STROKE_WIDTH = 1.5  # px
DEPTH_BIAS = 0.004  # meters, lifts strokes off the surface for the z-test


@dataclass(frozen=True)
class CameraSpec:
    """Frontal orthographic camera: looks along -z, y up, square frame."""

    center_x: float = 0.0
    center_y: float = 0.95
    half_extent: float = 1.0  # meters covered from center to frame edge

    @staticmethod
    def for_gtype(gtype=None) -> "CameraSpec":
        # one fixed full-body frame per garment type (identical today)
        return CameraSpec()


def descriptor_length() -> int:
    n_cells = SKETCH_SIZE // HOG_CELL
    n_blocks = n_cells // HOG_BLOCK
    return n_blocks * n_blocks * HOG_BLOCK * HOG_BLOCK * HOG_ORIENTATIONS


@njit(cache=True)
def _raster_depth(tri_px, tri_z, size):
    """Max-z (nearest to the +z camera) depth buffer over the triangles."""
    zbuf = np.full((size, size), -1e30)
    m = tri_px.shape[0]
    for t in range(m):
        x0, y0 = tri_px[t, 0, 0], tri_px[t, 0, 1]
        x1, y1 = tri_px[t, 1, 0], tri_px[t, 1, 1]
        x2, y2 = tri_px[t, 2, 0], tri_px[t, 2, 1]
        lo_x = max(int(np.floor(min(x0, min(x1, x2)))), 0)
        hi_x = min(int(np.ceil(max(x0, max(x1, x2)))), size - 1)
        lo_y = max(int(np.floor(min(y0, min(y1, y2)))), 0)
        hi_y = min(int(np.ceil(max(y0, max(y1, y2)))), size - 1)
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < 1e-12:
            continue
        for py in range(lo_y, hi_y + 1):
            for px in range(lo_x, hi_x + 1):
                cx = px + 0.5
                cy = py + 0.5
                w0 = ((x1 - cx) * (y2 - cy) - (x2 - cx) * (y1 - cy)) / area
                w1 = ((x2 - cx) * (y0 - cy) - (x0 - cx) * (y2 - cy)) / area
                w2 = 1.0 - w0 - w1
                if w0 >= -1e-9 and w1 >= -1e-9 and w2 >= -1e-9:
                    z = w0 * tri_z[t, 0] + w1 * tri_z[t, 1] + w2 * tri_z[t, 2]
                    if z > zbuf[py, px]:
                        zbuf[py, px] = z
    return zbuf


@njit(cache=True)
def _draw_segments(segs, zbuf, img, half_width, bias):
    """Antialiased depth-tested segments; darkens img in place."""
    size = img.shape[0]
    for s in range(segs.shape[0]):
        x0, y0, z0 = segs[s, 0], segs[s, 1], segs[s, 2]
        x1, y1, z1 = segs[s, 3], segs[s, 4], segs[s, 5]
        lo_x = max(int(np.floor(min(x0, x1) - half_width - 1)), 0)
        hi_x = min(int(np.ceil(max(x0, x1) + half_width + 1)), size - 1)
        lo_y = max(int(np.floor(min(y0, y1) - half_width - 1)), 0)
        hi_y = min(int(np.ceil(max(y0, y1) + half_width + 1)), size - 1)
        dx = x1 - x0
        dy = y1 - y0
        len2 = dx * dx + dy * dy
        for py in range(lo_y, hi_y + 1):
            for px in range(lo_x, hi_x + 1):
                cx = px + 0.5
                cy = py + 0.5
                if len2 > 1e-12:
                    t = ((cx - x0) * dx + (cy - y0) * dy) / len2
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                else:
                    t = 0.0
                qx = x0 + t * dx
                qy = y0 + t * dy
                d = np.sqrt((cx - qx) ** 2 + (cy - qy) ** 2)
                cov = half_width + 0.5 - d
                if cov <= 0.0:
                    continue
                if cov > 1.0:
                    cov = 1.0
                z = z0 + t * (z1 - z0)
                if z + bias >= zbuf[py, px]:
                    val = 1.0 - cov
                    if val < img[py, px]:
                        img[py, px] = val
    return img


def _edge_faces(triangles: np.ndarray) -> dict[tuple[int, int], list[int]]:
    owners: dict[tuple[int, int], list[int]] = {}
    for fi, t in enumerate(triangles):
        for k in range(3):
            a, b = int(t[k]), int(t[(k + 1) % 3])
            owners.setdefault((min(a, b), max(a, b)), []).append(fi)
    return owners


def render_sketch(
    positions: np.ndarray,
    triangles: np.ndarray,
    cam: CameraSpec | None = None,
    crease_threshold_deg: float = CREASE_THRESHOLD_DEG,
    stroke_width: float = STROKE_WIDTH,
) -> np.ndarray:
    """NPR line rendering of a garment mesh; deterministic."""
    cam = cam or CameraSpec()
    pos = np.asarray(positions, dtype=np.float64)
    tris = np.asarray(triangles, dtype=np.int64)
    v0, v1, v2 = pos[tris[:, 0]], pos[tris[:, 1]], pos[tris[:, 2]]
    normals = np.cross(v1 - v0, v2 - v0)
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / np.maximum(norms, 1e-18)
    front = normals[:, 2] > 0.0

    owners = _edge_faces(tris)
    cos_thresh = np.cos(np.deg2rad(crease_threshold_deg))
    stroke_edges = []
    for (a, b), faces in owners.items():
        if len(faces) == 1:
            stroke_edges.append((a, b))
        else:
            f0, f1 = faces[0], faces[1]
            if front[f0] != front[f1]:
                stroke_edges.append((a, b))
            elif float(normals[f0] @ normals[f1]) < cos_thresh:
                stroke_edges.append((a, b))

    scale = SKETCH_SIZE / (2.0 * cam.half_extent)
    px = (pos[:, 0] - cam.center_x + cam.half_extent) * scale
    py = (cam.center_y + cam.half_extent - pos[:, 1]) * scale
    tri_px = np.stack([np.stack([px[tris[:, k]], py[tris[:, k]]], axis=1) for k in range(3)], axis=1)
    tri_z = np.stack([pos[tris[:, k], 2] for k in range(3)], axis=1)
    zbuf = _raster_depth(np.ascontiguousarray(tri_px), np.ascontiguousarray(tri_z), SKETCH_SIZE)

    img = np.ones((SKETCH_SIZE, SKETCH_SIZE))
    if stroke_edges:
        e = np.asarray(stroke_edges, dtype=np.int64)
        segs = np.stack(
            [px[e[:, 0]], py[e[:, 0]], pos[e[:, 0], 2], px[e[:, 1]], py[e[:, 1]], pos[e[:, 1], 2]],
            axis=1,
        )
        _draw_segments(np.ascontiguousarray(segs), zbuf, img, stroke_width / 2.0, DEPTH_BIAS)
    return img


def augment(
    img: np.ndarray,
    seed: int,
    min_component: int | None = None,
    smooth: bool | None = None,
    sigma: float | None = None,
) -> np.ndarray:
    """Seeded sketch augmentation: drop small stroke fragments, smooth
    curves, gaussian blur. Explicit zeros reduce to the identity."""
    rng = np.random.default_rng(seed)
    out = np.asarray(img, dtype=np.float64).copy()
    if min_component is None:
        min_component = int(rng.integers(0, 13))  # erase fragments below this size
    if smooth is None:
        smooth = bool(rng.integers(0, 2))
    if sigma is None:
        sigma = float(rng.uniform(0.0, 1.1))
    if min_component > 0:
        ink = out < 0.85
        labels, n = ndimage.label(ink, structure=np.ones((3, 3)))
        if n:
            sizes = ndimage.sum_labels(np.ones_like(out), labels, index=np.arange(1, n + 1))
            kill = np.isin(labels, np.nonzero(sizes < min_component)[0] + 1)
            out[kill] = 1.0
    if smooth:
        out = ndimage.median_filter(out, size=3, mode="nearest")
    if sigma > 1e-6:
        out = ndimage.gaussian_filter(out, sigma=sigma, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def descriptor(img: np.ndarray) -> np.ndarray:
    """Block-normalized HOG feature vector of a sketch."""
    x = np.asarray(img, dtype=np.float64)
    if x.shape != (SKETCH_SIZE, SKETCH_SIZE):
        raise ValueError(f"sketch must be {SKETCH_SIZE}x{SKETCH_SIZE}, got {x.shape}")
    gy, gx = np.gradient(x)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)  # unsigned orientation
    bins = np.minimum((ang / np.pi * HOG_ORIENTATIONS).astype(np.int64), HOG_ORIENTATIONS - 1)

    n_cells = SKETCH_SIZE // HOG_CELL
    hist = np.zeros((n_cells, n_cells, HOG_ORIENTATIONS))
    cell_row = np.arange(SKETCH_SIZE) // HOG_CELL
    flat_idx = (cell_row[:, None] * n_cells + cell_row[None, :]) * HOG_ORIENTATIONS + bins
    np.add.at(hist.reshape(-1), flat_idx.ravel(), mag.ravel())

    nb = n_cells // HOG_BLOCK
    feats = np.empty((nb, nb, HOG_BLOCK * HOG_BLOCK * HOG_ORIENTATIONS))
    for by in range(nb):
        for bx in range(nb):
            block = hist[
                by * HOG_BLOCK : (by + 1) * HOG_BLOCK, bx * HOG_BLOCK : (bx + 1) * HOG_BLOCK
            ].ravel()
            feats[by, bx] = block / (np.linalg.norm(block) + 1e-9)
    return feats.ravel()


def hog_distance(a: np.ndarray, b: np.ndarray) -> float:
    """L2 distance between the HOG features of two sketches."""
    return float(np.linalg.norm(descriptor(a) - descriptor(b)))


def count_hem_folds(positions: np.ndarray, hem_indices: np.ndarray, prominence_frac: float = 0.08) -> int:
    """Fold extrema along the hem ring: local maxima of the radial profile
    around the hem centroid in the horizontal plane."""
    hem = np.asarray(positions)[np.asarray(hem_indices)]
    center = hem[:, [0, 2]].mean(axis=0)
    d = hem[:, [0, 2]] - center
    theta = np.arctan2(d[:, 1], d[:, 0])
    order = np.argsort(theta)
    r = np.hypot(d[order, 0], d[order, 1])
    if len(r) < 8:
        return 0
    span = float(r.max() - r.min())
    if span < 1e-9:
        return 0
    wrapped = np.concatenate([r, r[: len(r) // 2]])  # circular signal
    peaks, _ = find_peaks(wrapped, prominence=prominence_frac * span)
    peaks = peaks[peaks < len(r)]
    return int(len(peaks))


def hem_indices(pattern_vertices_2d: np.ndarray, panel_id: np.ndarray, band: float = 0.02) -> np.ndarray:
    """Vertices within `band` of each panel's lowest pattern-space point."""
    out = []
    for p in np.unique(panel_id):
        sel = np.where(panel_id == p)[0]
        ymin = pattern_vertices_2d[sel, 1].min()
        out.append(sel[pattern_vertices_2d[sel, 1] <= ymin + band])
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# PNG I/O and user-sketch ingestion

def save_png(img: np.ndarray, path) -> None:
    arr = np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def ingest_png(data: bytes, min_side: int = 32) -> np.ndarray:
    """Decode a user PNG and letterbox it to the sketch resolution.

    Raises ValueError on undecodable or degenerate images.
    """
    if not data:
        raise ValueError("empty image payload")
    try:
        with Image.open(io.BytesIO(data)) as im:
            im = im.convert("L")
            w, h = im.size
            if min(w, h) < min_side:
                raise ValueError(f"image too small: {w}x{h}")
            scale = SKETCH_SIZE / max(w, h)
            nw, nh = max(round(w * scale), 1), max(round(h * scale), 1)
            im = im.resize((nw, nh), Image.LANCZOS)
            canvas = Image.new("L", (SKETCH_SIZE, SKETCH_SIZE), color=255)
            canvas.paste(im, ((SKETCH_SIZE - nw) // 2, (SKETCH_SIZE - nh) // 2))
            return np.asarray(canvas, dtype=np.float64) / 255.0
    except ValueError:
        raise
    except Exception as err:
        raise ValueError(f"could not decode image: {err}") from err
