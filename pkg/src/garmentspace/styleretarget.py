"""Style-aware garment distance and retargeting to new bodies.

A Siamese MLP embeds PCA coefficient vectors so that embedding distances
mimic HOG distances between the garments' sketches. Retargeting minimizes

    E(G') = | emb(l2m(p2l(G, B))) - emb(l2m(p2l(G', B'))) |

over the garment parameters G' with a limited-memory BFGS solver
(strong Wolfe line search, box projection onto [0,1] after each step),
chaining reverse-mode gradients through the three networks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .archive import load_archive, save_archive
from .jointmodel import JointModel, split_param_vector
from .neural import Mlp, NonFiniteLoss, TrainConfig, backward, forward, make_mlp, sgd_step
from .patterns import GarmentType

log = logging.getLogger(__name__)


class NonFiniteEnergy(Exception):
    pass


class LineSearchFailure(Exception):
    """No acceptable step found; best-so-far iterate attached."""

    def __init__(self, msg, best_x=None, trace=None):
        super().__init__(msg)
        self.best_x = best_x
        self.trace = trace


# ---------------------------------------------------------------------------
# Siamese style embedding

def siamese_widths(pca_dim: int, embed_dim: int) -> list[int]:
    # 6 blocks, width fixed until the last reduces to the embedding size
    return [pca_dim] * 6 + [embed_dim]


def make_style_embedding(pca_dim: int, embed_dim: int = 32, seed: int = 0) -> Mlp:
    return make_mlp(siamese_widths(pca_dim, embed_dim), seed=seed)


def style_distance(style: Mlp, ma: np.ndarray, mb: np.ndarray) -> float:
    """L2 distance in the learned embedding; symmetric, zero on identity."""
    ea, _ = forward(style, np.atleast_2d(ma))
    eb, _ = forward(style, np.atleast_2d(mb))
    return float(np.linalg.norm(ea - eb))


def train_siamese(
    style: Mlp,
    M: np.ndarray,
    hog_dist: "callable | np.ndarray",
    train_idx: np.ndarray,
    cfg: TrainConfig,
    pairs_per_epoch: int | None = None,
):
    """Fit embedding distances to HOG distances with MSE on sampled pairs.

    hog_dist is either a precomputed (n, n) matrix or a callable (i, j) ->
    distance. Pairs are drawn inside train_idx, reseeded per epoch.
    """
    rng = np.random.default_rng(cfg.seed)
    n_pairs = pairs_per_epoch or max(len(train_idx), 256)
    history = []
    lookup = (lambda i, j: hog_dist[i, j]) if isinstance(hog_dist, np.ndarray) else hog_dist
    for epoch in range(cfg.epochs):
        ii = train_idx[rng.integers(0, len(train_idx), size=n_pairs)]
        jj = train_idx[rng.integers(0, len(train_idx), size=n_pairs)]
        targets = np.array([lookup(i, j) for i, j in zip(ii, jj)])
        total = 0.0
        for start in range(0, n_pairs, cfg.batch_size):
            ia = ii[start : start + cfg.batch_size]
            ib = jj[start : start + cfg.batch_size]
            if len(ia) < 2:
                continue
            t = targets[start : start + cfg.batch_size]
            ea, ca = forward(style, M[ia], train=True)
            eb, cb = forward(style, M[ib], train=True)
            diff = ea - eb
            d = np.linalg.norm(diff, axis=1)
            err = d - t
            loss = float((err**2).mean())
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"siamese epoch {epoch}: non-finite loss")
            # d(loss)/d(ea) = 2*err/n * diff/|diff|
            gd = (2.0 * err / (len(ia) * np.maximum(d, 1e-12)))[:, None] * diff
            ga, _ = backward(style, ca, gd)
            gb, _ = backward(style, cb, -gd)
            merged = {k: ga[k] + gb[k] for k in ga}
            sgd_step(style, merged, cfg.lr)
            total += loss * len(ia)
        history.append(total / n_pairs)
    return history


def save_style_checkpoint(path, style: Mlp, meta: dict | None = None) -> None:
    save_archive(path, style.state_dict(), {"kind": "style", **(meta or {})})


def load_style_checkpoint(path) -> Mlp:
    tensors, meta = load_archive(path)
    if meta.get("kind") != "style":
        raise ValueError(f"{path}: not a style checkpoint")
    return Mlp.from_state_dict(tensors)


# ---------------------------------------------------------------------------
# L-BFGS with strong Wolfe line search and box projection

@dataclass(eq=False)
class SolverSettings:
    memory: int = 10
    max_iters: int = 200
    grad_tol: float = 1e-6
    c1: float = 1e-4
    c2: float = 0.9
    max_line_iters: int = 25
    plateau_threshold: float = 1e-4  # restarts trigger above this energy
    restarts: int = 4


def _strong_wolfe(f_and_g, x, fx, gx, direction, c1, c2, max_iters):
    """Nocedal-Wright bracketing line search; returns (alpha, fx1, gx1) or None."""
    phi0 = fx
    dphi0 = float(gx @ direction)
    if dphi0 >= 0:
        return None

    def phi(alpha):
        fv, gv = f_and_g(x + alpha * direction)
        return fv, gv, float(gv @ direction)

    def zoom(lo, hi, f_lo, df_lo):
        f_hi = None
        for _ in range(max_iters):
            # cubic-ish bisection: quadratic interpolation midpoint, safeguarded
            alpha = 0.5 * (lo + hi)
            fv, gv, dfv = phi(alpha)
            if fv > phi0 + c1 * alpha * dphi0 or fv >= f_lo:
                hi = alpha
            else:
                if abs(dfv) <= -c2 * dphi0:
                    return alpha, fv, gv
                if dfv * (hi - lo) >= 0:
                    hi = lo
                lo, f_lo, df_lo = alpha, fv, dfv
            if abs(hi - lo) < 1e-14:
                break
        return None

    alpha_prev, f_prev = 0.0, phi0
    alpha = 1.0
    for it in range(max_iters):
        fv, gv, dfv = phi(alpha)
        if not np.isfinite(fv):
            alpha *= 0.5
            continue
        if fv > phi0 + c1 * alpha * dphi0 or (it > 0 and fv >= f_prev):
            return zoom(alpha_prev, alpha, f_prev, dphi0)
        if abs(dfv) <= -c2 * dphi0:
            return alpha, fv, gv
        if dfv >= 0:
            return zoom(alpha, alpha_prev, fv, dfv)
        alpha_prev, f_prev = alpha, fv
        alpha *= 2.0
    return None


def lbfgs_minimize(
    f_and_g,
    x0: np.ndarray,
    settings: SolverSettings | None = None,
    bounds: tuple[float, float] | None = None,
):
    """Two-loop L-BFGS. Returns (x_best, trace) where trace is the energy at
    x0 followed by every accepted step (nonincreasing by construction).

    With bounds, iterates are clamped after the line search (projected
    variant); curvature pairs with nonpositive s.y are dropped.
    """
    s = settings or SolverSettings()
    x = np.asarray(x0, dtype=np.float64).copy()
    if bounds is not None:
        x = np.clip(x, bounds[0], bounds[1])
    fx, gx = f_and_g(x)
    if not np.isfinite(fx):
        raise NonFiniteEnergy("objective not finite at the initial point")
    trace = [float(fx)]
    mem_s: list[np.ndarray] = []
    mem_y: list[np.ndarray] = []
    failed = False
    for _ in range(s.max_iters):
        if np.linalg.norm(gx) < s.grad_tol:
            break
        q = gx.copy()
        alphas = []
        for si, yi in zip(reversed(mem_s), reversed(mem_y)):
            rho = 1.0 / float(yi @ si)
            a = rho * float(si @ q)
            q -= a * yi
            alphas.append((a, rho))
        if mem_s:
            gamma = float(mem_s[-1] @ mem_y[-1]) / float(mem_y[-1] @ mem_y[-1])
            q *= gamma
        for (a, rho), si, yi in zip(reversed(alphas), mem_s, mem_y):
            b = rho * float(yi @ q)
            q += (a - b) * si
        direction = -q
        step = _strong_wolfe(f_and_g, x, fx, gx, direction, s.c1, s.c2, s.max_line_iters)
        if step is None:
            # fall back to steepest descent once before giving up
            direction = -gx
            step = _strong_wolfe(f_and_g, x, fx, gx, direction, s.c1, s.c2, s.max_line_iters)
            if step is None:
                failed = True
                break
            mem_s.clear()
            mem_y.clear()
        alpha, f_new, g_new = step
        x_new = x + alpha * direction
        if bounds is not None:
            clipped = np.clip(x_new, bounds[0], bounds[1])
            if not np.array_equal(clipped, x_new):
                f_new, g_new = f_and_g(clipped)
                tries = 0
                while f_new > fx and tries < 6:
                    alpha *= 0.5
                    clipped = np.clip(x + alpha * direction, bounds[0], bounds[1])
                    f_new, g_new = f_and_g(clipped)
                    tries += 1
                if f_new > fx:
                    failed = True
                    break
                x_new = clipped
        sk = x_new - x
        yk = g_new - gx
        if float(sk @ yk) > 1e-12:
            mem_s.append(sk)
            mem_y.append(yk)
            if len(mem_s) > s.memory:
                mem_s.pop(0)
                mem_y.pop(0)
        x, fx, gx = x_new, f_new, g_new
        trace.append(float(fx))
    if failed and len(trace) == 1:
        raise LineSearchFailure("no descent step found", best_x=x, trace=trace)
    return x, trace


# ---------------------------------------------------------------------------
# retargeting

@dataclass(eq=False)
class RetargetProblem:
    gtype: GarmentType
    garment: np.ndarray  # G (shape dims + materials), normalized
    body: np.ndarray  # B, 10 normalized dims
    new_body: np.ndarray  # B'
    initial: np.ndarray | None = None  # G'_0, defaults to the source garment
    settings: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        for name in ("garment", "body", "new_body"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if np.any(arr < -1e-9) or np.any(arr > 1 + 1e-9):
                raise ValueError(f"{name} must be normalized to [0,1]")
            setattr(self, name, arr)


@dataclass(eq=False)
class RetargetResult:
    garment: np.ndarray  # optimized G'
    trace: list[float]  # energy at accepted steps, nonincreasing
    converged: bool
    restarts_used: int = 0


def _style_energy_fn(joint: JointModel, style: Mlp, body_vec: np.ndarray, target_emb: np.ndarray):
    """E(G') = |emb(l2m(p2l(G', B'))) - target| with analytic gradient."""

    def f_and_g(gvec: np.ndarray):
        p_vec = np.concatenate([gvec, body_vec])[None, :]
        lat, c1 = forward(joint.f_p2l, p_vec)
        m_hat, c2 = forward(joint.f_l2m, lat)
        emb, c3 = forward(style, m_hat)
        r = emb[0] - target_emb
        e = float(np.linalg.norm(r))
        if not np.isfinite(e):
            raise NonFiniteEnergy("retarget energy is not finite")
        if e < 1e-300:
            return 0.0, np.zeros(len(gvec))
        gout = (r / e)[None, :]
        _, g_m = backward(style, c3, gout)
        _, g_lat = backward(joint.f_l2m, c2, g_m)
        _, g_p = backward(joint.f_p2l, c1, g_lat)
        return e, g_p[0][: len(gvec)]

    return f_and_g


def source_embedding(joint: JointModel, style: Mlp, garment: np.ndarray, body: np.ndarray) -> np.ndarray:
    p_vec = np.concatenate([garment, body])[None, :]
    lat, _ = forward(joint.f_p2l, p_vec)
    m_hat, _ = forward(joint.f_l2m, lat)
    emb, _ = forward(style, m_hat)
    return emb[0]


def retarget(problem: RetargetProblem, joint: JointModel, style: Mlp, seed: int = 0) -> RetargetResult:
    """Optimize G' so the new drape keeps the source garment's style.

    Starts from the source parameters; if the energy plateaus above the
    configured threshold, retries from seeded random interior points and
    keeps the best.
    """
    target = source_embedding(joint, style, problem.garment, problem.body)
    fg = _style_energy_fn(joint, style, problem.new_body, target)
    x0 = problem.initial if problem.initial is not None else problem.garment
    x0 = np.asarray(x0, dtype=np.float64)

    e0, _ = fg(x0)
    if e0 < 1e-10:
        return RetargetResult(x0.copy(), [e0], converged=True)

    best_x, best_trace = None, None
    restarts_used = 0
    rng = np.random.default_rng(seed)
    starts = [x0]
    for x_start in starts:
        try:
            x, trace = lbfgs_minimize(fg, x_start, problem.settings, bounds=(0.0, 1.0))
        except LineSearchFailure as err:
            x, trace = err.best_x, err.trace or [e0]
        if best_trace is None or trace[-1] < best_trace[-1]:
            best_x, best_trace = x, trace
        if best_trace[-1] <= problem.settings.plateau_threshold:
            break
        if len(starts) < 1 + problem.settings.restarts:
            starts.append(rng.uniform(0.05, 0.95, size=len(x0)))
            restarts_used += 1
    converged = best_trace[-1] <= problem.settings.plateau_threshold or (
        len(best_trace) > 1 and best_trace[-1] < best_trace[0]
    )
    return RetargetResult(best_x, best_trace, converged, restarts_used)
