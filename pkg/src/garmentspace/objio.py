"""Minimal OBJ writing/reading for meshes produced by the pipeline.

Output is deterministic (fixed float formatting) so exported artifacts can
be digest-compared across runs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_obj(
    path: str | Path,
    vertices: np.ndarray,
    triangles: np.ndarray | None = None,
    uv: np.ndarray | None = None,
    comment: str | None = None,
) -> None:
    """Write v / vt / f records. 2D vertices are lifted into the xy-plane."""
    v = np.asarray(vertices, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] not in (2, 3):
        raise ValueError(f"vertices must be (n,2) or (n,3), got {v.shape}")
    if v.shape[1] == 2:
        v = np.concatenate([v, np.zeros((len(v), 1))], axis=1)
    lines = []
    if comment:
        lines.append(f"# {comment}")
    for p in v:
        lines.append(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}")
    if uv is not None:
        uv = np.asarray(uv, dtype=np.float64)
        for t in uv:
            lines.append(f"vt {t[0]:.9g} {t[1]:.9g}")
    if triangles is not None:
        for a, b, c in np.asarray(triangles, dtype=np.int64) + 1:
            if uv is not None:
                lines.append(f"f {a}/{a} {b}/{b} {c}/{c}")
            else:
                lines.append(f"f {a} {b} {c}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Read (vertices, triangles, uv-or-None). Only v/vt/f records are parsed."""
    verts, uvs, tris = [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vt":
            uvs.append([float(x) for x in parts[1:3]])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:4]]
            tris.append(idx)
    uv = np.asarray(uvs, dtype=np.float64) if uvs else None
    return (
        np.asarray(verts, dtype=np.float64),
        np.asarray(tris, dtype=np.int64) if tris else np.zeros((0, 3), dtype=np.int64),
        uv,
    )
