"""HTTP service exposing trained models to the interactive studio.

Pure inference only: no training or simulation runs behind any endpoint.
Mesh payloads are JSON with base64 little-endian buffers (float32
positions/uv, int32 triangles); the last few computed meshes are also
downloadable as OBJ. Identical requests against the same checkpoints give
identical responses.
"""

from __future__ import annotations

import base64
import logging
import os
import threading
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .archive import load_archive
from .correspond import ReferenceTopology, uv_of
from .jointmodel import (
    JointModel,
    decode_latent,
    encode_params,
    encode_sketch,
    load_checkpoint,
    param_dim,
    split_param_vector,
)
from .mannequin import BodyShape, PoseSpec, build_mannequin
from .neural import Mlp
from .patterns import GarmentType
from .sketchpipe import descriptor, ingest_png
from .styleretarget import RetargetProblem, load_style_checkpoint, retarget

log = logging.getLogger(__name__)

MESH_CACHE_SIZE = 64
RETARGET_WORKERS = 2


@dataclass(eq=False)
class ModelBundle:
    gtype: GarmentType
    joint: JointModel
    ref: ReferenceTopology
    style: Mlp | None = None

    def __post_init__(self):
        self.uv = uv_of(self.ref)


@dataclass(eq=False)
class SessionState:
    """Per-session design state; every edit resolves through the latent."""

    params: list | None = None
    latent: list | None = None
    coeffs: list | None = None
    history: deque = field(default_factory=lambda: deque(maxlen=32))


class ServerState:
    def __init__(self, bundles: dict[str, ModelBundle]):
        self.bundles = bundles
        self.meshes: OrderedDict[str, str] = OrderedDict()  # id -> obj text
        self.sessions: dict[str, SessionState] = {}
        self.lock = threading.Lock()
        self.retarget_gate = threading.BoundedSemaphore(RETARGET_WORKERS)
        self.counter = 0

    def stash_mesh(self, verts: np.ndarray, bundle: ModelBundle) -> str:
        with self.lock:
            self.counter += 1
            mesh_id = f"m{self.counter:06d}"
        lines = [f"# garmentspace mesh {mesh_id}"]
        for p in verts:
            lines.append(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}")
        for t in bundle.uv:
            lines.append(f"vt {t[0]:.9g} {t[1]:.9g}")
        for a, b, c in bundle.ref.triangles + 1:
            lines.append(f"f {a}/{a} {b}/{b} {c}/{c}")
        text = "\n".join(lines) + "\n"
        with self.lock:
            self.meshes[mesh_id] = text
            while len(self.meshes) > MESH_CACHE_SIZE:
                self.meshes.popitem(last=False)
        return mesh_id

    def session(self, sid: str) -> SessionState:
        with self.lock:
            return self.sessions.setdefault(sid, SessionState())


def build_state(models_dir: Path, data_dirs=()) -> ServerState:
    """Scan a models directory (<gtype>/joint.gsar [style.gsar]
    reference.gsar) honoring GARMENTSPACE_MODELS env override."""
    models_dir = Path(os.environ.get("GARMENTSPACE_MODELS", models_dir))
    bundles: dict[str, ModelBundle] = {}
    for child in sorted(models_dir.iterdir()) if models_dir.is_dir() else []:
        joint_path = child / "joint.gsar"
        ref_path = child / "reference.gsar"
        if not (child.is_dir() and joint_path.exists() and ref_path.exists()):
            continue
        joint = load_checkpoint(joint_path)
        rt, rmeta = load_archive(ref_path)
        ref = ReferenceTopology(
            gtype=joint.gtype,
            vertices_uv=rt["vertices_uv"],
            triangles=rt["triangles"],
            panel_id=rt["panel_id"],
            panel_names=tuple(rmeta["panel_names"]),
            panel_bboxes=rt["panel_bboxes"],
            target_edge=rmeta["target_edge"],
        )
        style = None
        if (child / "style.gsar").exists():
            style = load_style_checkpoint(child / "style.gsar")
        bundles[joint.gtype.value] = ModelBundle(joint.gtype, joint, ref, style)
        log.info("loaded %s models from %s", joint.gtype.value, child)
    return ServerState(bundles)


def _b64(arr: np.ndarray, dtype) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype=dtype).tobytes()).decode("ascii")


def _mesh_payload(state: ServerState, bundle: ModelBundle, verts: np.ndarray) -> dict:
    mesh_id = state.stash_mesh(verts, bundle)
    return {
        "mesh_id": mesh_id,
        "positions_b64": _b64(verts, "<f4"),
        "triangles_b64": _b64(bundle.ref.triangles, "<i4"),
        "uv_b64": _b64(bundle.uv, "<f4"),
        "n_vertices": int(len(verts)),
        "n_triangles": int(len(bundle.ref.triangles)),
    }


def _fix_penetration(verts: np.ndarray, p_vec: np.ndarray, gtype: GarmentType) -> np.ndarray:
    """Project predicted vertices out of the predicted body (Fig.-6-style
    optional cleanup)."""
    _, _, b = split_param_vector(gtype, p_vec)
    body = build_mannequin(BodyShape(np.clip(b, 0, 1)), PoseSpec.TARGET)
    sd = body.sdf(verts)
    inside = sd < 0
    if np.any(inside):
        verts = verts.copy()
        verts[inside] += (-sd[inside])[:, None] * body.sdf_gradient(verts[inside])
    return verts


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=status)


def create_app(state: ServerState) -> FastAPI:
    from . import __version__

    app = FastAPI(title="garmentspace", version=__version__)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def bundle_or_none(gtype: str) -> ModelBundle | None:
        return state.bundles.get(gtype)

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__, "models": sorted(state.bundles)}

    @app.get("/models")
    def models():
        out = []
        for name, b in sorted(state.bundles.items()):
            out.append(
                {
                    "gtype": name,
                    "latent_dim": b.joint.latent_dim,
                    "pca_k": b.joint.pca.k,
                    "param_dim": param_dim(b.gtype),
                    "has_style": b.style is not None,
                    "n_vertices": int(b.ref.n_vertices),
                }
            )
        return {"models": out}

    @app.post("/infer/sketch")
    async def infer_sketch(request: Request, gtype: str = "skirt", fix_penetration: bool = False):
        b = bundle_or_none(gtype)
        if b is None:
            return _error(503, f"no model loaded for {gtype!r}")
        data = await request.body()
        try:
            img = ingest_png(data)
        except ValueError as err:
            return _error(400, str(err))
        s_vec = descriptor(img)
        lat = encode_sketch(b.joint, s_vec)
        p_hat, coeffs, verts = decode_latent(b.joint, lat)
        if fix_penetration:
            verts = _fix_penetration(verts, p_hat, b.gtype)
        sid = request.headers.get("x-session-id", "default")
        sess = state.session(sid)
        sess.params = p_hat.tolist()
        sess.latent = lat[0].tolist()
        sess.coeffs = np.asarray(coeffs).tolist()
        sess.history.append({"op": "sketch", "params": sess.params})
        return {
            "params": p_hat.tolist(),
            "latent": lat[0].tolist(),
            "mesh": _mesh_payload(state, b, verts),
        }

    @app.post("/infer/params")
    async def infer_params(request: Request, fix_penetration: bool = False):
        body = await request.json()
        gtype = body.get("gtype", "skirt")
        b = bundle_or_none(gtype)
        if b is None:
            return _error(503, f"no model loaded for {gtype!r}")
        p_vec = np.asarray(body.get("params", []), dtype=np.float64)
        expected = param_dim(b.gtype)
        if p_vec.shape != (expected,):
            return _error(422, f"params must have {expected} entries")
        if np.any(p_vec < 0) or np.any(p_vec > 1):
            return _error(422, "params must lie in [0,1]")
        lat = encode_params(b.joint, p_vec)
        p_hat, coeffs, verts = decode_latent(b.joint, lat)
        if fix_penetration:
            verts = _fix_penetration(verts, p_vec, b.gtype)
        sid = request.headers.get("x-session-id", "default")
        sess = state.session(sid)
        sess.params = p_vec.tolist()
        sess.latent = lat[0].tolist()
        sess.history.append({"op": "params", "params": sess.params})
        return {
            "latent": lat[0].tolist(),
            "mesh": _mesh_payload(state, b, verts),
        }

    @app.post("/interpolate")
    async def interpolate_ep(request: Request):
        body = await request.json()
        gtype = body.get("gtype", "skirt")
        b = bundle_or_none(gtype)
        if b is None:
            return _error(503, f"no model loaded for {gtype!r}")
        la = np.asarray(body.get("latent_a", []), dtype=np.float64)
        lb = np.asarray(body.get("latent_b", []), dtype=np.float64)
        t = float(body.get("t", 0.0))
        k = b.joint.latent_dim
        if la.shape != (k,) or lb.shape != (k,):
            return _error(422, f"latent vectors must have {k} entries")
        if not 0.0 <= t <= 1.0:
            return _error(422, "t must lie in [0,1]")
        lat = (1.0 - t) * la + t * lb
        p_hat, _, verts = decode_latent(b.joint, lat)
        return {
            "params": p_hat.tolist(),
            "latent": lat.tolist(),
            "mesh": _mesh_payload(state, b, verts),
        }

    @app.post("/retarget")
    async def retarget_ep(request: Request):
        body = await request.json()
        gtype = body.get("gtype", "skirt")
        b = bundle_or_none(gtype)
        if b is None:
            return _error(503, f"no model loaded for {gtype!r}")
        if b.style is None:
            return _error(503, f"no style embedding loaded for {gtype!r}")
        try:
            garment = np.asarray(body["garment"], dtype=np.float64)
            src_body = np.asarray(body["body"], dtype=np.float64)
            new_body = np.asarray(body["new_body"], dtype=np.float64)
        except KeyError as err:
            return _error(422, f"missing field {err}")
        expected_g = param_dim(b.gtype) - 10
        if garment.shape != (expected_g,) or src_body.shape != (10,) or new_body.shape != (10,):
            return _error(422, "bad vector sizes for retarget request")
        if min(garment.min(), src_body.min(), new_body.min()) < 0 or max(
            garment.max(), src_body.max(), new_body.max()
        ) > 1:
            return _error(422, "all parameters must lie in [0,1]")
        with state.retarget_gate:
            problem = RetargetProblem(b.gtype, garment, src_body, new_body)
            result = retarget(problem, b.joint, b.style, seed=int(body.get("seed", 0)))
        lat_src = encode_params(b.joint, np.concatenate([garment, src_body]))
        _, _, verts_src = decode_latent(b.joint, lat_src)
        lat_new = encode_params(b.joint, np.concatenate([result.garment, new_body]))
        _, _, verts_new = decode_latent(b.joint, lat_new)
        return {
            "garment": result.garment.tolist(),
            "energy_trace": result.trace,
            "converged": bool(result.converged),
            "mesh": _mesh_payload(state, b, verts_src),
            "mesh_retargeted": _mesh_payload(state, b, verts_new),
        }

    @app.get("/mesh/{mesh_id}.obj")
    def mesh_obj(mesh_id: str):
        with state.lock:
            text = state.meshes.get(mesh_id)
        if text is None:
            return _error(404, f"unknown mesh id {mesh_id!r}")
        return Response(text, media_type="text/plain")

    @app.get("/session")
    def session(request: Request):
        sid = request.headers.get("x-session-id", "default")
        sess = state.session(sid)
        return {
            "params": sess.params,
            "latent": sess.latent,
            "history_length": len(sess.history),
        }

    return app
