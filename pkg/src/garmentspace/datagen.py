"""End-to-end corpus generation: sample (G, B) -> drape -> remesh ->
sketch -> descriptor, persisted as one directory per dataset.

Layout (all binary files byte-reproducible for digest checks):

    manifest.json        counts, seeds, range tables, bbox, digest
    reference.gsar       reference topology tensors
    pca.gsar             PCA model + coefficient normalization table
    samples/s00000.gsar  per-sample record: positions, P, flags (resumable)
    P.npy M.npy S.npy meshes.npy split.npy   columnar arrays
    sketches/s00000.png  optional, for debugging

Per-sample seeds derive from SeedSequence((master, index, retry)), so
regeneration is deterministic and independent of worker scheduling.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .archive import load_archive, save_archive
from .correspond import ReferenceTopology, build_reference, remesh_to_reference
from .drape import DrapeConfig, SolverDiverged, drape
from .mannequin import BODY_RANGES, BodyShape, build_mannequin
from .patterns import (
    GarmentParams,
    GarmentType,
    RANGE_TABLES,
    build_pattern_mesh,
    denormalize,
    instantiate_pattern,
    param_count,
)
from .shapespace import CoeffNormalizer, PcaModel, fit, project_batch
from .sketchpipe import augment, descriptor, descriptor_length, render_sketch, save_png

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAX_RETRIES = 5


@dataclass(eq=False)
class GarmentDataset:
    """In-memory handle over a generated dataset directory."""

    path: Path
    manifest: dict
    gtype: GarmentType
    P: np.ndarray  # (n, p) normalized parameter vectors
    M: np.ndarray  # (n, k) raw PCA coefficients
    M_unit: np.ndarray  # (n, k) min-max normalized over the training split
    S: np.ndarray  # (n, d) sketch descriptors
    meshes: np.ndarray  # (n, V, 3)
    ref: ReferenceTopology
    pca: PcaModel
    norm: CoeffNormalizer
    train_idx: np.ndarray
    test_idx: np.ndarray
    vert_lo: np.ndarray
    vert_hi: np.ndarray

    @property
    def n(self) -> int:
        return len(self.P)


def split_ids(n: int, ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint, exhaustive, seeded train/test id split (floor at ratio)."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = int(np.floor(n * ratio))
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def _sample_seed(master: int, index: int, retry: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((master, index, retry)))


def _generate_one(args) -> dict:
    """Worker: drape one sample (with retries) and persist its record."""
    (out_dir, gtype_value, index, master_seed, target_edge, cfg_kwargs) = args
    gtype = GarmentType(gtype_value)
    cfg = DrapeConfig(**cfg_kwargs)
    path = Path(out_dir) / "samples" / f"s{index:05d}.gsar"
    if path.exists():
        return {"index": index, "cached": True, "retries": 0}
    last_err = "unknown"
    for retry in range(MAX_RETRIES):
        rng = _sample_seed(master_seed, index, retry)
        g = GarmentParams(rng.uniform(0, 1, param_count(gtype)), rng.uniform(0, 1, 3))
        b = BodyShape(rng.uniform(0, 1, 10))
        try:
            panels = instantiate_pattern(gtype, g, b)
            mesh = build_pattern_mesh(panels, target_edge, seed=int(rng.integers(1 << 31)))
            body = build_mannequin(b)
            raw = drape(mesh, g, body, cfg, seed=int(rng.integers(1 << 31)), gtype=gtype)
            top = body.measurements["shoulders_y"]
            if raw.positions[:, 1].mean() < 0.1 * top:
                last_err = "garment slipped off the body"
                continue
        except SolverDiverged as err:
            last_err = f"diverged: {err}"
            continue
        except Exception as err:  # degenerate panel / triangulation failure
            last_err = f"{type(err).__name__}: {err}"
            continue
        # remesh happens in the parent (needs the shared reference); store the
        # raw drape plus everything needed to rebuild its pattern geometry
        save_archive(
            path,
            {
                "positions": raw.positions,
                "pattern_vertices": mesh.vertices_2d,
                "pattern_triangles": mesh.triangles,
                "pattern_panel": mesh.source_panel,
                "P_shape": g.shape_dims,
                "P_material": g.material,
                "B": b.shape,
            },
            {
                "index": index,
                "retries": retry,
                "settled": bool(raw.settled),
                "panel_names": list(mesh.panel_names),
                "target_edge": target_edge,
            },
        )
        return {"index": index, "cached": False, "retries": retry, "settled": raw.settled}
    return {"index": index, "failed": True, "error": last_err, "retries": MAX_RETRIES}


@dataclass(eq=False)
class _SamplePattern:
    """Just enough of a PatternMesh/DrapedMeshRaw for remeshing."""

    vertices_2d: np.ndarray
    triangles: np.ndarray
    source_panel: np.ndarray
    panel_names: tuple
    target_edge: float


def generate(
    gtype: GarmentType,
    n_samples: int,
    seed: int,
    out_dir: str | Path,
    drape_cfg: DrapeConfig | None = None,
    target_edge: float = 0.035,
    pca_k: int = 32,
    split_ratio: float = 0.95,
    split_seed: int | None = None,
    n_workers: int | None = None,
    keep_pngs: bool = False,
    augment_sketches: bool = True,
) -> GarmentDataset:
    """Generate a dataset archive; resumable and deterministic per seed."""
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    cfg = drape_cfg or DrapeConfig()
    split_seed = seed if split_seed is None else split_seed
    cfg_kwargs = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}

    jobs = [
        (str(out), gtype.value, i, seed, target_edge, cfg_kwargs)
        for i in range(n_samples)
        if not (out / "samples" / f"s{i:05d}.gsar").exists()
    ]
    results = []
    if jobs:
        workers = n_workers or max(os.cpu_count() or 1, 1)
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for res in pool.map(_generate_one, jobs, chunksize=4):
                    results.append(res)
                    if res.get("failed"):
                        log.warning("sample %d failed after %d retries: %s", res["index"], res["retries"], res["error"])
        else:
            for job in jobs:
                res = _generate_one(job)
                results.append(res)
                if res.get("failed"):
                    log.warning("sample %d failed after %d retries: %s", res["index"], res["retries"], res["error"])
    failed = [r["index"] for r in results if r.get("failed")]
    if failed:
        raise RuntimeError(f"{len(failed)} samples failed after {MAX_RETRIES} retries each: {failed[:10]}")

    ref, _ = build_reference(gtype, target_edge, seed=0)
    positions = np.empty((n_samples, ref.n_vertices, 3))
    P = np.empty((n_samples, param_count(gtype) + 3 + 10))
    retries = {}
    unsettled = []
    for i in range(n_samples):
        tensors, meta = load_archive(out / "samples" / f"s{i:05d}.gsar")
        pattern = _SamplePattern(
            tensors["pattern_vertices"],
            tensors["pattern_triangles"],
            tensors["pattern_panel"],
            tuple(meta["panel_names"]),
            meta["target_edge"],
        )
        raw = type("Raw", (), {"positions": tensors["positions"], "pattern": pattern})()
        dm = remesh_to_reference(raw, ref)
        positions[i] = dm.positions
        P[i] = np.concatenate([tensors["P_shape"], tensors["P_material"], tensors["B"]])
        if meta["retries"]:
            retries[str(i)] = meta["retries"]
        if not meta["settled"]:
            unsettled.append(i)

    k_eff = min(pca_k, n_samples - 1, positions.shape[1] * 3)
    if k_eff < pca_k:
        log.warning("pca_k=%d clamped to %d (dataset size)", pca_k, k_eff)
    pca = fit(positions, k_eff)
    coeffs = project_batch(pca, positions)
    train_idx, test_idx = split_ids(n_samples, split_ratio, split_seed)
    norm = CoeffNormalizer.fit(coeffs[train_idx])

    if keep_pngs:
        (out / "sketches").mkdir(exist_ok=True)
    S = np.empty((n_samples, descriptor_length()))
    for i in range(n_samples):
        img = render_sketch(positions[i], ref.triangles)
        if augment_sketches:
            img = augment(img, seed=int(_sample_seed(seed, i, 999).integers(1 << 31)))
        if keep_pngs:
            save_png(img, out / "sketches" / f"s{i:05d}.png")
        S[i] = descriptor(img)

    train_verts = positions[train_idx].reshape(-1, 3)
    vert_lo = train_verts.min(axis=0)
    vert_hi = train_verts.max(axis=0)

    np.save(out / "P.npy", P)
    np.save(out / "M.npy", coeffs)
    np.save(out / "S.npy", S)
    np.save(out / "meshes.npy", positions)
    np.save(out / "split.npy", np.concatenate([train_idx, test_idx]))
    save_archive(
        out / "reference.gsar",
        {
            "vertices_uv": ref.vertices_uv,
            "triangles": ref.triangles,
            "panel_id": ref.panel_id,
            "panel_bboxes": ref.panel_bboxes,
        },
        {"gtype": gtype.value, "panel_names": list(ref.panel_names), "target_edge": target_edge},
    )
    save_archive(
        out / "pca.gsar",
        {
            "mean": pca.mean,
            "basis": pca.basis,
            "singular_values": pca.singular_values,
            "norm_lo": norm.lo,
            "norm_hi": norm.hi,
        },
        {"k": pca.k, "n_train": pca.n_train},
    )
    manifest = {
        "format": FORMAT_VERSION,
        "gtype": gtype.value,
        "n_samples": n_samples,
        "seed": seed,
        "split_seed": split_seed,
        "split_ratio": split_ratio,
        "n_train": int(len(train_idx)),
        "n_test": int(len(test_idx)),
        "target_edge": target_edge,
        "pca_k": pca_k,
        "descriptor_length": int(descriptor_length()),
        "augment_sketches": augment_sketches,
        "range_table": [list(row) for row in RANGE_TABLES[gtype]],
        "body_ranges": [list(row) for row in BODY_RANGES],
        "vert_lo": vert_lo.tolist(),
        "vert_hi": vert_hi.tolist(),
        "retries": retries,
        "unsettled": unsettled,
        "reference_seed": 0,
    }
    manifest["digest"] = dataset_digest(out)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return load_dataset(out)


DIGEST_FILES = ("P.npy", "M.npy", "S.npy", "meshes.npy", "split.npy", "reference.gsar", "pca.gsar")


def dataset_digest(path: str | Path) -> str:
    """sha256 over the dataset's data files (manifest excluded)."""
    h = hashlib.sha256()
    for name in DIGEST_FILES:
        h.update(name.encode())
        h.update(Path(path, name).read_bytes())
    return h.hexdigest()


def load_dataset(path: str | Path) -> GarmentDataset:
    out = Path(path)
    manifest = json.loads((out / "manifest.json").read_text())
    if manifest["format"] > FORMAT_VERSION:
        raise ValueError("dataset format is newer than this build supports")
    gtype = GarmentType(manifest["gtype"])
    rt, rmeta = load_archive(out / "reference.gsar")
    ref = ReferenceTopology(
        gtype=gtype,
        vertices_uv=rt["vertices_uv"],
        triangles=rt["triangles"],
        panel_id=rt["panel_id"],
        panel_names=tuple(rmeta["panel_names"]),
        panel_bboxes=rt["panel_bboxes"],
        target_edge=rmeta["target_edge"],
    )
    pt, pmeta = load_archive(out / "pca.gsar")
    pca = PcaModel(pt["mean"], pt["basis"], pt["singular_values"], int(pmeta["k"]), int(pmeta["n_train"]))
    norm = CoeffNormalizer(pt["norm_lo"], pt["norm_hi"])
    split = np.load(out / "split.npy")
    n_train = manifest["n_train"]
    coeffs = np.load(out / "M.npy")
    return GarmentDataset(
        path=out,
        manifest=manifest,
        gtype=gtype,
        P=np.load(out / "P.npy"),
        M=coeffs,
        M_unit=norm.normalize(coeffs),
        S=np.load(out / "S.npy"),
        meshes=np.load(out / "meshes.npy"),
        ref=ref,
        pca=pca,
        norm=norm,
        train_idx=split[:n_train],
        test_idx=split[n_train:],
        vert_lo=np.asarray(manifest["vert_lo"]),
        vert_hi=np.asarray(manifest["vert_hi"]),
    )


def export_params_csv(ds: GarmentDataset, path: str | Path) -> None:
    """Flat CSV of normalized P vectors (one row per sample) for inspection."""
    names = [row[0] for row in RANGE_TABLES[ds.gtype]]
    names += ["material_stretch", "material_bend", "material_shear"]
    names += [row[0] for row in BODY_RANGES]
    lines = ["sample,split," + ",".join(names)]
    test = set(ds.test_idx.tolist())
    for i in range(ds.n):
        split = "test" if i in test else "train"
        lines.append(f"{i},{split}," + ",".join(f"{v:.9g}" for v in ds.P[i]))
    Path(path).write_text("\n".join(lines) + "\n")
