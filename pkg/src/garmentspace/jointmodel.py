"""Shared latent space across sketches, parameters, and draped garments.

Four networks meet in one K-dim latent code: a sketch-descriptor encoder,
a parameter encoder, a parameter decoder, and a mesh-coefficient decoder.
They are trained jointly on (P, M, S) triplets with a four-term loss of
unsquared L2 norms:

    w1 |P - l2p(s2l(S))| + w2 |M - l2m(s2l(S))|
  + w3 |M - l2m(p2l(P))| + w4 |P - l2p(p2l(P))|

with w1 = w2 = 40*w3 = 40*w4 by default. The parameter vector P stacks the
garment shape dims, 3 material scalars, and 10 body dims, all in [0,1];
M is the PCA coefficient vector min-max normalized over the training split.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .archive import load_archive, save_archive
from .mannequin import BodyShape, build_mannequin, PoseSpec
from .neural import Mlp, NonFiniteLoss, TrainConfig, backward, forward, make_mlp, sgd_step
from .patterns import GarmentType, param_count
from .shapespace import CoeffNormalizer, PcaModel, reconstruct

log = logging.getLogger(__name__)

BODY_DIMS = 10
MATERIAL_DIMS = 3


def param_dim(gtype: GarmentType) -> int:
    """Length of P = (garment shape dims, 3 materials, 10 body dims)."""
    return param_count(gtype) + MATERIAL_DIMS + BODY_DIMS


@dataclass(frozen=True)
class LossWeights:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 0.025
    w4: float = 0.025

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3, self.w4) <= 0:
            raise ValueError("loss weights must be positive")

    def as_tuple(self):
        return (self.w1, self.w2, self.w3, self.w4)


def desk_widths(gtype: GarmentType, hog_dim: int, latent: int = 32, pca_dim: int = 32) -> dict[str, list[int]]:
    """Desk-scale architecture: paper block counts, shrunk widths."""
    p = param_dim(gtype)
    return {
        "s2l": [hog_dim] + [256] * 6 + [128, 64, 32, latent],
        "p2l": [p, p] + [latent] * 5,
        "l2m": [latent, latent, latent] + [pca_dim] * 4,
        "l2p": [latent] * 6 + [p],
    }


def paper_widths(gtype: GarmentType, descriptor_dim: int = 2208, latent: int = 100, pca_dim: int = 200) -> dict[str, list[int]]:
    """Architecture at published scale: 10-block sketch encoder tapering
    through 1000/500/200 to the latent size, 6-block companions."""
    p = param_dim(gtype)
    return {
        "s2l": [descriptor_dim] * 7 + [1000, 500, 200, latent],
        "p2l": [p, p] + [latent] * 5,
        "l2m": [latent, latent, latent] + [pca_dim] * 4,
        "l2p": [latent] * 6 + [p],
    }


@dataclass(eq=False)
class JointModel:
    gtype: GarmentType
    f_s2l: Mlp
    f_p2l: Mlp
    f_l2m: Mlp
    f_l2p: Mlp
    pca: PcaModel
    coeff_norm: CoeffNormalizer
    weights: LossWeights = field(default_factory=LossWeights)

    @property
    def latent_dim(self) -> int:
        return self.f_s2l.d_out

    def nets(self) -> dict[str, Mlp]:
        return {"s2l": self.f_s2l, "p2l": self.f_p2l, "l2m": self.f_l2m, "l2p": self.f_l2p}


def make_joint_model(
    gtype: GarmentType,
    pca: PcaModel,
    coeff_norm: CoeffNormalizer,
    hog_dim: int,
    latent: int = 32,
    seed: int = 0,
    weights: LossWeights | None = None,
    widths: dict[str, list[int]] | None = None,
) -> JointModel:
    widths = widths or desk_widths(gtype, hog_dim, latent, pca.k)
    return JointModel(
        gtype=gtype,
        f_s2l=make_mlp(widths["s2l"], seed=seed),
        f_p2l=make_mlp(widths["p2l"], seed=seed + 1),
        f_l2m=make_mlp(widths["l2m"], seed=seed + 2),
        f_l2p=make_mlp(widths["l2p"], seed=seed + 3),
        pca=pca,
        coeff_norm=coeff_norm,
        weights=weights or LossWeights(),
    )


def _norm_rows(r: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.atleast_2d(r), axis=1)


def joint_loss(model: JointModel, P: np.ndarray, M: np.ndarray, S: np.ndarray):
    """Eq-style combined loss (eval-mode forward, batch-averaged).

    Returns (total, breakdown) where breakdown holds the four weighted terms.
    """
    P = np.atleast_2d(P)
    M = np.atleast_2d(M)
    S = np.atleast_2d(S)
    w = model.weights
    ls, _ = forward(model.f_s2l, S)
    lp, _ = forward(model.f_p2l, P)
    ps_hat, _ = forward(model.f_l2p, ls)
    ms_hat, _ = forward(model.f_l2m, ls)
    mp_hat, _ = forward(model.f_l2m, lp)
    pp_hat, _ = forward(model.f_l2p, lp)
    terms = {
        "w1_sketch_param": w.w1 * float(_norm_rows(P - ps_hat).mean()),
        "w2_sketch_mesh": w.w2 * float(_norm_rows(M - ms_hat).mean()),
        "w3_param_mesh": w.w3 * float(_norm_rows(M - mp_hat).mean()),
        "w4_param_param": w.w4 * float(_norm_rows(P - pp_hat).mean()),
    }
    total = float(sum(terms.values()))
    if not np.isfinite(total):
        raise NonFiniteLoss("joint loss is not finite")
    return total, terms


def _norm_grad(pred: np.ndarray, truth: np.ndarray, weight: float) -> tuple[float, np.ndarray]:
    """Batch-mean unsquared-L2 term and its gradient w.r.t. pred."""
    r = pred - truth
    norms = np.linalg.norm(r, axis=1)
    loss = weight * float(norms.mean())
    g = weight * r / (len(r) * np.maximum(norms, 1e-12))[:, None]
    return loss, g


@dataclass(eq=False)
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_test: float = np.inf


def train_joint(
    model: JointModel,
    P: np.ndarray,
    M: np.ndarray,
    S: np.ndarray,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    cfg: TrainConfig,
    sketch_only: bool = False,
) -> TrainHistory:
    """Joint SGD on the four-term loss; retains the best-test checkpoint.

    sketch_only trains just the S -> L -> M path (the overfitting-prone
    direct mapping used as the generalization baseline).
    """
    rng = np.random.default_rng(cfg.seed)
    w = model.weights
    hist = TrainHistory()
    best_state: dict | None = None
    nets = model.nets()
    n = len(train_idx)
    for epoch in range(cfg.epochs):
        order = train_idx[rng.permutation(n)]
        total = 0.0
        count = 0
        try:
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                if len(idx) < 2:
                    continue
                bp, bm, bs = P[idx], M[idx], S[idx]
                ls, cs = forward(model.f_s2l, bs, train=True)
                if sketch_only:
                    ms_hat, cm = forward(model.f_l2m, ls, train=True)
                    loss2, gm = _norm_grad(ms_hat, bm, w.w2)
                    gr_m, gls = backward(model.f_l2m, cm, gm)
                    gr_s, _ = backward(model.f_s2l, cs, gls)
                    sgd_step(model.f_l2m, gr_m, cfg.lr)
                    sgd_step(model.f_s2l, gr_s, cfg.lr)
                    batch_loss = loss2
                else:
                    lp, cp = forward(model.f_p2l, bp, train=True)
                    lat = np.concatenate([ls, lp])
                    p_hat, cdp = forward(model.f_l2p, lat, train=True)
                    m_hat, cdm = forward(model.f_l2m, lat, train=True)
                    b = len(idx)
                    loss1, g1 = _norm_grad(p_hat[:b], bp, w.w1)
                    loss4, g4 = _norm_grad(p_hat[b:], bp, w.w4)
                    loss2, g2 = _norm_grad(m_hat[:b], bm, w.w2)
                    loss3, g3 = _norm_grad(m_hat[b:], bm, w.w3)
                    gr_l2p, glat_p = backward(model.f_l2p, cdp, np.concatenate([g1, g4]))
                    gr_l2m, glat_m = backward(model.f_l2m, cdm, np.concatenate([g2, g3]))
                    glat = glat_p + glat_m
                    gr_s, _ = backward(model.f_s2l, cs, glat[:b])
                    gr_p, _ = backward(model.f_p2l, cp, glat[b:])
                    sgd_step(model.f_l2p, gr_l2p, cfg.lr)
                    sgd_step(model.f_l2m, gr_l2m, cfg.lr)
                    sgd_step(model.f_s2l, gr_s, cfg.lr)
                    sgd_step(model.f_p2l, gr_p, cfg.lr)
                    batch_loss = loss1 + loss2 + loss3 + loss4
                if not np.isfinite(batch_loss):
                    raise NonFiniteLoss(f"epoch {epoch}: non-finite loss")
                total += batch_loss * len(idx)
                count += len(idx)
        except NonFiniteLoss:
            log.warning("training aborted at epoch %d; restoring best checkpoint", epoch)
            break
        hist.train_loss.append(total / max(count, 1))
        if sketch_only:
            ls, _ = forward(model.f_s2l, S[test_idx])
            ms_hat, _ = forward(model.f_l2m, ls)
            test_loss = w.w2 * float(_norm_rows(M[test_idx] - ms_hat).mean())
        else:
            test_loss, _ = joint_loss(model, P[test_idx], M[test_idx], S[test_idx])
        hist.test_loss.append(test_loss)
        if test_loss < hist.best_test:
            hist.best_test = test_loss
            hist.best_epoch = epoch
            best_state = {k: {kk: vv.copy() for kk, vv in net.state_dict().items()} for k, net in nets.items()}
    if best_state is not None:
        model.f_s2l = Mlp.from_state_dict(best_state["s2l"])
        model.f_p2l = Mlp.from_state_dict(best_state["p2l"])
        model.f_l2m = Mlp.from_state_dict(best_state["l2m"])
        model.f_l2p = Mlp.from_state_dict(best_state["l2p"])
    return hist


# ---------------------------------------------------------------------------
# inference

def encode_sketch(model: JointModel, S: np.ndarray) -> np.ndarray:
    out, _ = forward(model.f_s2l, np.atleast_2d(S))
    return out


def encode_params(model: JointModel, P: np.ndarray) -> np.ndarray:
    out, _ = forward(model.f_p2l, np.atleast_2d(P))
    return out


def decode_latent(model: JointModel, L: np.ndarray):
    """(P in [0,1], unit-scale mesh coeffs, reconstructed (V,3) vertices)."""
    L = np.atleast_2d(L)
    p_hat, _ = forward(model.f_l2p, L)
    m_hat, _ = forward(model.f_l2m, L)
    p_hat = np.clip(p_hat, 0.0, 1.0)
    verts = np.stack([reconstruct(model.pca, model.coeff_norm.denormalize(m)) for m in m_hat])
    if len(L) == 1:
        return p_hat[0], m_hat[0], verts[0]
    return p_hat, m_hat, verts


def infer_from_sketch(model: JointModel, S: np.ndarray):
    """(ParamVector, vertices, latent) for one sketch descriptor."""
    lat = encode_sketch(model, S)
    p_hat, _, verts = decode_latent(model, lat)
    return p_hat, verts, lat[0]


def infer_from_params(model: JointModel, P: np.ndarray):
    """(vertices, latent) for one normalized parameter vector."""
    lat = encode_params(model, P)
    _, _, verts = decode_latent(model, lat)
    return verts, lat[0]


def interpolate(model: JointModel, la: np.ndarray, lb: np.ndarray, t: float):
    """Decode (1-t)*la + t*lb through both decoders."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0,1]")
    lat = (1.0 - t) * np.asarray(la) + t * np.asarray(lb)
    p_hat, _, verts = decode_latent(model, lat)
    return p_hat, verts


def split_param_vector(gtype: GarmentType, P: np.ndarray):
    """(garment shape dims, materials, body dims) views of a P vector."""
    ng = param_count(gtype)
    P = np.asarray(P)
    return P[..., :ng], P[..., ng : ng + MATERIAL_DIMS], P[..., ng + MATERIAL_DIMS :]


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: JointModel, extra_meta: dict | None = None) -> None:
    tensors: dict[str, np.ndarray] = {}
    for name, net in model.nets().items():
        for k, v in net.state_dict().items():
            tensors[f"{name}.{k}"] = v
    tensors["pca.mean"] = model.pca.mean
    tensors["pca.basis"] = model.pca.basis
    tensors["pca.singular_values"] = model.pca.singular_values
    tensors["norm.lo"] = model.coeff_norm.lo
    tensors["norm.hi"] = model.coeff_norm.hi
    meta = {
        "kind": "joint",
        "version": CHECKPOINT_VERSION,
        "gtype": model.gtype.value,
        "weights": model.weights.as_tuple(),
        "pca_n_train": model.pca.n_train,
        **(extra_meta or {}),
    }
    save_archive(path, tensors, meta)


def load_checkpoint(path) -> JointModel:
    tensors, meta = load_archive(path)
    if meta.get("kind") != "joint":
        raise ValueError(f"{path}: not a joint-model checkpoint")
    pca = PcaModel(
        mean=tensors["pca.mean"],
        basis=tensors["pca.basis"],
        singular_values=tensors["pca.singular_values"],
        k=len(tensors["pca.singular_values"]),
        n_train=int(meta.get("pca_n_train", 0)),
    )
    return JointModel(
        gtype=GarmentType(meta["gtype"]),
        f_s2l=Mlp.from_state_dict(tensors, "s2l."),
        f_p2l=Mlp.from_state_dict(tensors, "p2l."),
        f_l2m=Mlp.from_state_dict(tensors, "l2m."),
        f_l2p=Mlp.from_state_dict(tensors, "l2p."),
        pca=pca,
        coeff_norm=CoeffNormalizer(tensors["norm.lo"], tensors["norm.hi"]),
        weights=LossWeights(*meta["weights"]),
    )


# ---------------------------------------------------------------------------
# evaluation harness: average L2 errors, everything normalized to [0,1]

BODY_VERT_SCALE = np.array([2.2, 1.95, 0.6])  # fixed normalization box (meters)


def _l2pct(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean over samples of per-coordinate RMS distance, as a percentage."""
    pred = np.atleast_2d(pred)
    truth = np.atleast_2d(truth)
    return float((np.linalg.norm(pred - truth, axis=1) / np.sqrt(pred.shape[1])).mean() * 100.0)


def _body_vertices(b_vec: np.ndarray) -> np.ndarray:
    body = build_mannequin(BodyShape(np.clip(b_vec, 0.0, 1.0)), PoseSpec.TARGET)
    v, _ = body.tessellate(n_around=8, n_cap=2)
    return (v / BODY_VERT_SCALE).ravel()


def evaluate_paths(
    model: JointModel,
    P: np.ndarray,
    M: np.ndarray,
    S: np.ndarray,
    meshes: np.ndarray,
    idx: np.ndarray,
    vert_lo: np.ndarray,
    vert_hi: np.ndarray,
    with_body_verts: bool = True,
) -> dict[str, dict[str, float]]:
    """Metrics for the sketch path and the parameter path over idx samples.

    Returns {path: {l2_pca, l2_vert, l2_body, l2_body_vert, l2_garment}},
    all as percentages of the [0,1]-normalized quantities.
    """
    ng = param_count(model.gtype)
    out: dict[str, dict[str, float]] = {}
    span = np.maximum(vert_hi - vert_lo, 1e-12)
    true_vn = ((meshes[idx].reshape(len(idx), -1, 3) - vert_lo) / span).reshape(len(idx), -1)
    for path in ("sketch", "param"):
        lat = encode_sketch(model, S[idx]) if path == "sketch" else encode_params(model, P[idx])
        p_hat, _ = forward(model.f_l2p, lat)
        m_hat, _ = forward(model.f_l2m, lat)
        p_hat = np.clip(p_hat, 0.0, 1.0)
        recon = np.stack(
            [reconstruct(model.pca, model.coeff_norm.denormalize(m)).ravel() for m in m_hat]
        ).reshape(len(idx), -1, 3)
        recon_n = ((recon - vert_lo) / span).reshape(len(idx), -1)
        metrics = {
            "l2_pca": _l2pct(m_hat, M[idx]),
            "l2_vert": _l2pct(recon_n, true_vn),
            "l2_body": _l2pct(p_hat[:, ng + MATERIAL_DIMS :], P[idx][:, ng + MATERIAL_DIMS :]),
            "l2_garment": _l2pct(p_hat[:, : ng + MATERIAL_DIMS], P[idx][:, : ng + MATERIAL_DIMS]),
        }
        if with_body_verts:
            bv_pred = np.stack([_body_vertices(p[ng + MATERIAL_DIMS :]) for p in p_hat])
            bv_true = np.stack([_body_vertices(p[ng + MATERIAL_DIMS :]) for p in P[idx]])
            metrics["l2_body_vert"] = _l2pct(bv_pred, bv_true)
        out[path] = metrics
    return out


def heldout_vertex_error(model: JointModel, S, meshes, idx, vert_lo, vert_hi) -> float:
    """Sketch-path vertex L2 (%) on idx; the joint-vs-direct comparison metric."""
    span = np.maximum(vert_hi - vert_lo, 1e-12)
    lat = encode_sketch(model, S[idx])
    m_hat, _ = forward(model.f_l2m, lat)
    recon = np.stack(
        [reconstruct(model.pca, model.coeff_norm.denormalize(m)).ravel() for m in m_hat]
    ).reshape(len(idx), -1, 3)
    recon_n = ((recon - vert_lo) / span).reshape(len(idx), -1)
    true_vn = ((meshes[idx].reshape(len(idx), -1, 3) - vert_lo) / span).reshape(len(idx), -1)
    return _l2pct(recon_n, true_vn)


def baseline_vertex_errors(
    S: np.ndarray,
    meshes: np.ndarray,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    vert_lo: np.ndarray,
    vert_hi: np.ndarray,
) -> dict[str, float]:
    """Mean-mesh predictor and 1-NN-by-descriptor heldout vertex errors."""
    span = np.maximum(vert_hi - vert_lo, 1e-12)

    def nrm(x):
        return ((x.reshape(len(x), -1, 3) - vert_lo) / span).reshape(len(x), -1)

    true_vn = nrm(meshes[test_idx])
    mean_mesh = meshes[train_idx].reshape(len(train_idx), -1).mean(axis=0)
    mean_pred = np.tile(mean_mesh, (len(test_idx), 1))
    d2 = ((S[test_idx][:, None, :] - S[train_idx][None, :, :]) ** 2).sum(axis=2)
    nn = train_idx[np.argmin(d2, axis=1)]
    return {
        "mean_mesh": _l2pct(nrm(mean_pred), true_vn),
        "nn_descriptor": _l2pct(nrm(meshes[nn]), true_vn),
    }
