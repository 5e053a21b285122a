"""Operator command line: dataset generation, training, evaluation,
retargeting, interpolation, serving, export.

Every run writes a run_manifest.json (seeds + resolved config) next to its
outputs so artifacts are reproducible. Exit codes: 0 success, 1 user
error, 2 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import shutil
import sys
import time
from pathlib import Path

import numpy as np

log = logging.getLogger("garmentspace")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UserError(message)


class UserError(Exception):
    pass


def _write_run_manifest(out_dir: Path, command: str, args: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "args": {k: v for k, v in args.items() if not k.startswith("_")},
        "version": _version(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(payload, indent=1, sort_keys=True, default=str))


def _version() -> str:
    from . import __version__

    return __version__


def _gtype(value: str):
    from .patterns import GarmentType

    try:
        return GarmentType(value)
    except ValueError:
        raise UserError(f"unknown garment type {value!r}; choose shirt, skirt, or kimono")


def _load_preset(args):
    from .config import load_preset

    preset = load_preset(args.preset, args.config)
    for name in ("epochs", "lr", "batch_size", "seed"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(preset.joint_train, name, val)
            setattr(preset.siamese_train, name, val)
    if getattr(args, "n_samples", None) is not None:
        preset.n_samples = args.n_samples
    if getattr(args, "latent", None) is not None:
        preset.latent_dim = args.latent
    if getattr(args, "pca_k", None) is not None:
        preset.pca_k = args.pca_k
    return preset


def cmd_gen_data(args) -> int:
    from .datagen import generate
    from .patterns import RANGE_TABLES

    preset = _load_preset(args)
    gtype = _gtype(args.gtype)
    out = Path(args.output_dir)
    if args.dry_run:
        print(f"plan: generate {preset.n_samples} {gtype.value} samples")
        print(f"  seed={args.seed} target_edge={preset.target_edge} pca_k={preset.pca_k}")
        print(f"  output: {out}")
        print(f"  range table rows: {len(RANGE_TABLES[gtype])}")
        return 0
    _write_run_manifest(out, "gen-data", vars(args))
    ds = generate(
        gtype,
        preset.n_samples,
        args.seed if args.seed is not None else 0,
        out,
        drape_cfg=preset.drape,
        target_edge=preset.target_edge,
        pca_k=preset.pca_k,
        split_ratio=preset.split_ratio,
        n_workers=args.workers,
        keep_pngs=args.keep_pngs,
    )
    print(f"dataset: {ds.n} samples ({len(ds.train_idx)} train / {len(ds.test_idx)} test)")
    print(f"digest: {ds.manifest['digest']}")
    return 0


def _models_dir(args, gtype) -> Path:
    return Path(args.models) / gtype.value


def cmd_train_joint(args) -> int:
    from .datagen import load_dataset
    from .jointmodel import LossWeights, make_joint_model, save_checkpoint, train_joint
    from .config import desk_preset

    preset = _load_preset(args)
    ds = load_dataset(args.data)
    mdir = _models_dir(args, ds.gtype)
    mdir.mkdir(parents=True, exist_ok=True)
    _write_run_manifest(mdir, "train-joint", vars(args))
    widths = None
    if preset.use_paper_widths:
        from .jointmodel import paper_widths

        widths = paper_widths(ds.gtype, ds.S.shape[1], preset.latent_dim, ds.pca.k)
    model = make_joint_model(
        ds.gtype, ds.pca, ds.norm, hog_dim=ds.S.shape[1], latent=preset.latent_dim,
        seed=preset.joint_train.seed, weights=LossWeights(), widths=widths,
    )
    hist = train_joint(model, ds.P, ds.M_unit, ds.S, ds.train_idx, ds.test_idx, preset.joint_train)
    save_checkpoint(mdir / "joint.gsar", model, {"dataset_digest": ds.manifest["digest"], "preset": preset.name})
    shutil.copyfile(ds.path / "reference.gsar", mdir / "reference.gsar")
    (mdir / "joint_history.json").write_text(json.dumps(dataclasses.asdict(hist)))
    print(f"trained joint model: best test loss {hist.best_test:.6f} at epoch {hist.best_epoch}")
    print(f"checkpoint: {mdir / 'joint.gsar'}")
    return 0


def cmd_train_style(args) -> int:
    from .datagen import load_dataset
    from .styleretarget import make_style_embedding, save_style_checkpoint, train_siamese

    preset = _load_preset(args)
    ds = load_dataset(args.data)
    mdir = _models_dir(args, ds.gtype)
    mdir.mkdir(parents=True, exist_ok=True)
    _write_run_manifest(mdir, "train-style", vars(args))
    style = make_style_embedding(ds.pca.k, preset.style_embed_dim, seed=preset.siamese_train.seed)
    dmat = _hog_distance_matrix(ds)
    hist = train_siamese(style, ds.M_unit, dmat, ds.train_idx, preset.siamese_train)
    save_style_checkpoint(mdir / "style.gsar", style, {"dataset_digest": ds.manifest["digest"]})
    print(f"trained style embedding: final pair loss {hist[-1]:.6f}")
    print(f"checkpoint: {mdir / 'style.gsar'}")
    return 0


def _hog_distance_matrix(ds) -> np.ndarray:
    g = ds.S @ ds.S.T
    sq = np.diag(g)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * g, 0.0)
    return np.sqrt(d2)


def cmd_eval(args) -> int:
    from .datagen import load_dataset
    from .jointmodel import evaluate_paths, load_checkpoint

    ds = load_dataset(args.data)
    model = load_checkpoint(Path(args.joint))
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_run_manifest(out, "eval", vars(args))
    rng = np.random.default_rng(0)
    train_eval = ds.train_idx if len(ds.train_idx) <= args.max_train_eval else np.sort(
        rng.choice(ds.train_idx, size=args.max_train_eval, replace=False)
    )
    rows = []
    for split_name, idx in (("train", train_eval), ("test", ds.test_idx)):
        res = evaluate_paths(model, ds.P, ds.M_unit, ds.S, ds.meshes, idx, ds.vert_lo, ds.vert_hi)
        for path, metrics in res.items():
            rows.append({"garment": ds.gtype.value, "input": path, "split": split_name, **metrics})
    _write_metrics(out, rows)
    print((out / "metrics.txt").read_text())
    return 0


METRIC_COLUMNS = ("l2_pca", "l2_vert", "l2_body", "l2_body_vert", "l2_garment")


def _write_metrics(out: Path, rows: list[dict]) -> None:
    header = ["garment", "input", "split", *METRIC_COLUMNS]
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join([r["garment"], r["input"], r["split"]] + [f"{r[c]:.4f}" for c in METRIC_COLUMNS]))
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")
    txt = ["average L2 error (%), parameters and shapes normalized to [0,1]", ""]
    txt.append(f"{'garment':<8} {'input':<7} {'split':<6} " + " ".join(f"{c:>13}" for c in METRIC_COLUMNS))
    for r in rows:
        txt.append(
            f"{r['garment']:<8} {r['input']:<7} {r['split']:<6} "
            + " ".join(f"{r[c]:>12.2f}%" for c in METRIC_COLUMNS)
        )
    (out / "metrics.txt").write_text("\n".join(txt) + "\n")


def cmd_retarget(args) -> int:
    from .datagen import load_dataset
    from .jointmodel import load_checkpoint, split_param_vector
    from .objio import write_obj
    from .styleretarget import RetargetProblem, load_style_checkpoint, retarget
    from .jointmodel import decode_latent, encode_params

    ds = load_dataset(args.data)
    joint = load_checkpoint(args.joint)
    style = load_style_checkpoint(args.style)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_run_manifest(out, "retarget", vars(args))
    src = int(args.source_index)
    g_src, mat, b_src = split_param_vector(ds.gtype, ds.P[src])
    garment = np.concatenate([g_src, mat])
    rng = np.random.default_rng(args.target_body_seed)
    b_new = rng.uniform(0, 1, 10)
    problem = RetargetProblem(ds.gtype, garment, b_src, b_new)
    result = retarget(problem, joint, style, seed=args.target_body_seed)
    report = {
        "source_index": src,
        "source_garment": garment.tolist(),
        "source_body": b_src.tolist(),
        "target_body": b_new.tolist(),
        "retargeted_garment": result.garment.tolist(),
        "energy_trace": result.trace,
        "converged": result.converged,
        "restarts_used": result.restarts_used,
    }
    (out / "retarget.json").write_text(json.dumps(report, indent=1))
    from .neural import forward  # predicted drapes for both bodies
    from .correspond import uv_of

    uv = uv_of(ds.ref)
    for tag, gv, bv in (("source", garment, b_src), ("target", result.garment, b_new)):
        lat = encode_params(joint, np.concatenate([gv, bv]))
        _, _, verts = decode_latent(joint, lat)
        write_obj(out / f"retarget_{tag}.obj", verts, ds.ref.triangles, uv=uv, comment=f"retarget {tag}")
    print(f"energy: {result.trace[0]:.6f} -> {result.trace[-1]:.6f} over {len(result.trace) - 1} accepted steps")
    return 0


def cmd_interpolate(args) -> int:
    from .datagen import load_dataset
    from .jointmodel import encode_sketch, interpolate, load_checkpoint
    from .correspond import uv_of
    from .objio import write_obj

    ds = load_dataset(args.data)
    joint = load_checkpoint(args.joint)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_run_manifest(out, "interpolate", vars(args))
    la = encode_sketch(joint, ds.S[int(args.index_a)])[0]
    lb = encode_sketch(joint, ds.S[int(args.index_b)])[0]
    uv = uv_of(ds.ref)
    lines = ["t," + ",".join(f"p{i}" for i in range(ds.P.shape[1]))]
    for i in range(args.steps):
        t = i / (args.steps - 1) if args.steps > 1 else 0.0
        p_hat, verts = interpolate(joint, la, lb, t)
        write_obj(out / f"interp_{i:02d}.obj", verts, ds.ref.triangles, uv=uv, comment=f"t={t:.3f}")
        lines.append(f"{t:.4f}," + ",".join(f"{v:.6f}" for v in p_hat))
    (out / "interp_params.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {args.steps} interpolation steps to {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import build_state, create_app

    state = build_state(Path(args.models), data_dirs=[Path(p) for p in args.data or []])
    app = create_app(state)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_export_obj(args) -> int:
    from .correspond import uv_of
    from .datagen import load_dataset
    from .objio import write_obj

    ds = load_dataset(args.data)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    idx = [int(tok) for tok in args.indices.split(",")]
    uv = uv_of(ds.ref)
    for i in idx:
        if not 0 <= i < ds.n:
            raise UserError(f"sample index {i} out of range (dataset has {ds.n})")
        write_obj(out / f"sample_{i:05d}.obj", ds.meshes[i], ds.ref.triangles, uv=uv, comment=f"sample {i}")
    print(f"wrote {len(idx)} OBJ files to {out}")
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="garmentspace", description="garment design engine")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--preset", default="desk", choices=("desk", "paper"))
        sp.add_argument("--config", default=None, help="TOML-style config file")
        sp.add_argument("--seed", type=int, default=None)
        if data:
            sp.add_argument("--data", required=True, help="dataset directory")

    sp = sub.add_parser("gen-data", help="generate a synthetic corpus")
    common(sp, data=False)
    sp.add_argument("--gtype", required=True)
    sp.add_argument("--n-samples", type=int, default=None)
    sp.add_argument("--pca-k", type=int, default=None)
    sp.add_argument("--output-dir", required=True)
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--keep-pngs", action="store_true")
    sp.add_argument("--dry-run", action="store_true")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train-joint", help="train the shared latent space")
    common(sp)
    sp.add_argument("--models", required=True, help="models directory")
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--batch-size", type=int, default=None)
    sp.add_argument("--latent", type=int, default=None)
    sp.set_defaults(func=cmd_train_joint)

    sp = sub.add_parser("train-style", help="train the Siamese style embedding")
    common(sp)
    sp.add_argument("--models", required=True)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--batch-size", type=int, default=None)
    sp.set_defaults(func=cmd_train_style)

    sp = sub.add_parser("eval", help="metrics table for a trained model")
    common(sp)
    sp.add_argument("--joint", required=True)
    sp.add_argument("--output-dir", required=True)
    sp.add_argument("--max-train-eval", type=int, default=200)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("retarget", help="retarget one design to a new body")
    common(sp)
    sp.add_argument("--joint", required=True)
    sp.add_argument("--style", required=True)
    sp.add_argument("--source-index", type=int, required=True)
    sp.add_argument("--target-body-seed", type=int, default=0)
    sp.add_argument("--output-dir", required=True)
    sp.set_defaults(func=cmd_retarget)

    sp = sub.add_parser("interpolate", help="latent interpolation between two samples")
    common(sp)
    sp.add_argument("--joint", required=True)
    sp.add_argument("--index-a", type=int, required=True)
    sp.add_argument("--index-b", type=int, required=True)
    sp.add_argument("--steps", type=int, default=11)
    sp.add_argument("--output-dir", required=True)
    sp.set_defaults(func=cmd_interpolate)

    sp = sub.add_parser("serve", help="HTTP API for the studio UI")
    sp.add_argument("--models", required=True)
    sp.add_argument("--data", action="append", help="dataset dir(s) for sample lookups")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8601)
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("export-obj", help="export dataset samples as OBJ")
    sp.add_argument("--data", required=True)
    sp.add_argument("--indices", required=True, help="comma-separated sample ids")
    sp.add_argument("--output-dir", required=True)
    sp.set_defaults(func=cmd_export_obj)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UserError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as err:  # internal error
        import traceback

        traceback.print_exc()
        print(f"internal error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
