"""Small feed-forward network kit: linear blocks (linear -> ReLU -> batch
norm), reverse-mode gradients, and plain SGD. Everything is float64 numpy;
training is deterministic for a fixed seed.

Batch norm follows the block order used throughout this project (activation
before normalization), uses momentum 0.9 running statistics, eps 1e-5, and
eval mode always reads the running statistics so single-sample inference is
a pure function of the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BN_MOMENTUM = 0.9
BN_EPS = 1e-8  # small enough that unit-variance batches pass through unchanged


class DimensionMismatch(Exception):
    pass


class NonFiniteLoss(Exception):
    pass


@dataclass(eq=False)
class TrainConfig:
    lr: float = 0.05
    epochs: int = 2000
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1:
            raise ValueError("lr must be positive and batch_size >= 1")


@dataclass(eq=False)
class LinearBlock:
    w: np.ndarray  # (d_in, d_out)
    b: np.ndarray  # (d_out,)
    relu: bool = True
    bn: bool = True
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    run_mean: np.ndarray | None = None
    run_var: np.ndarray | None = None

    @property
    def d_in(self) -> int:
        return self.w.shape[0]

    @property
    def d_out(self) -> int:
        return self.w.shape[1]


@dataclass(eq=False)
class Mlp:
    blocks: list[LinearBlock]

    @property
    def d_in(self) -> int:
        return self.blocks[0].d_in

    @property
    def d_out(self) -> int:
        return self.blocks[-1].d_out

    def parameter_names(self) -> list[tuple[int, str]]:
        out = []
        for i, blk in enumerate(self.blocks):
            out.append((i, "w"))
            out.append((i, "b"))
            if blk.bn:
                out.append((i, "gamma"))
                out.append((i, "beta"))
        return out

    def get_param(self, key: tuple[int, str]) -> np.ndarray:
        return getattr(self.blocks[key[0]], key[1])

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for i, blk in enumerate(self.blocks):
            out[f"block{i}.w"] = blk.w
            out[f"block{i}.b"] = blk.b
            out[f"block{i}.flags"] = np.array([int(blk.relu), int(blk.bn)], dtype=np.int64)
            if blk.bn:
                out[f"block{i}.gamma"] = blk.gamma
                out[f"block{i}.beta"] = blk.beta
                out[f"block{i}.run_mean"] = blk.run_mean
                out[f"block{i}.run_var"] = blk.run_var
        return out

    @staticmethod
    def from_state_dict(state: dict[str, np.ndarray], prefix: str = "") -> "Mlp":
        blocks = []
        i = 0
        while f"{prefix}block{i}.w" in state:
            flags = state[f"{prefix}block{i}.flags"]
            blk = LinearBlock(
                w=state[f"{prefix}block{i}.w"].copy(),
                b=state[f"{prefix}block{i}.b"].copy(),
                relu=bool(flags[0]),
                bn=bool(flags[1]),
            )
            if blk.bn:
                blk.gamma = state[f"{prefix}block{i}.gamma"].copy()
                blk.beta = state[f"{prefix}block{i}.beta"].copy()
                blk.run_mean = state[f"{prefix}block{i}.run_mean"].copy()
                blk.run_var = state[f"{prefix}block{i}.run_var"].copy()
            blocks.append(blk)
            i += 1
        if not blocks:
            raise ValueError("no blocks found in state dict")
        return Mlp(blocks)

    def copy(self) -> "Mlp":
        return Mlp.from_state_dict(self.state_dict())


def make_mlp(widths: list[int], seed: int = 0, final_plain: bool = True) -> Mlp:
    """Chain of linear blocks with He-uniform init, zero bias, BN scale 1 /
    shift 0. The output block is plain affine when final_plain."""
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    rng = np.random.default_rng(seed)
    blocks = []
    for i in range(len(widths) - 1):
        d_in, d_out = widths[i], widths[i + 1]
        bound = np.sqrt(6.0 / d_in)
        last = i == len(widths) - 2
        blk = LinearBlock(
            w=rng.uniform(-bound, bound, size=(d_in, d_out)),
            b=np.zeros(d_out),
            relu=not (last and final_plain),
            bn=not (last and final_plain),
        )
        if blk.bn:
            blk.gamma = np.ones(d_out)
            blk.beta = np.zeros(d_out)
            blk.run_mean = np.zeros(d_out)
            blk.run_var = np.ones(d_out)
        blocks.append(blk)
    return Mlp(blocks)


def forward(net: Mlp, x: np.ndarray, train: bool = False):
    """Returns (output, caches). In train mode batch-norm uses batch
    statistics (batch >= 2 required) and updates the running buffers."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if h.shape[1] != net.d_in:
        raise DimensionMismatch(f"input dim {h.shape[1]} != network dim {net.d_in}")
    if train and h.shape[0] < 2:
        raise ValueError("train-mode forward needs batch >= 2 for batch norm")
    caches = []
    for blk in net.blocks:
        z = h @ blk.w + blk.b
        a = np.maximum(z, 0.0) if blk.relu else z
        cache = {"x": h, "z": z, "a": a, "train": train}
        if blk.bn:
            if train:
                mu = a.mean(axis=0)
                var = a.var(axis=0)
                blk.run_mean = BN_MOMENTUM * blk.run_mean + (1 - BN_MOMENTUM) * mu
                blk.run_var = BN_MOMENTUM * blk.run_var + (1 - BN_MOMENTUM) * var
            else:
                mu, var = blk.run_mean, blk.run_var
            sigma = np.sqrt(var + BN_EPS)
            ahat = (a - mu) / sigma
            h = blk.gamma * ahat + blk.beta
            cache.update(ahat=ahat, sigma=sigma)
        else:
            h = a
        caches.append(cache)
    return h, caches


def backward(net: Mlp, caches, grad_out: np.ndarray):
    """Reverse-mode pass. Returns (param_grads, grad_in) where param_grads
    mirrors state_dict keys (w, b, gamma, beta per block)."""
    g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
    grads: dict[str, np.ndarray] = {}
    for i in range(len(net.blocks) - 1, -1, -1):
        blk = net.blocks[i]
        cache = caches[i]
        if blk.bn:
            ahat, sigma = cache["ahat"], cache["sigma"]
            grads[f"block{i}.gamma"] = (g * ahat).sum(axis=0)
            grads[f"block{i}.beta"] = g.sum(axis=0)
            if cache["train"]:
                n = g.shape[0]
                gh = g * blk.gamma
                da = (gh - gh.mean(axis=0) - ahat * (gh * ahat).mean(axis=0)) / sigma
            else:
                da = g * blk.gamma / sigma
        else:
            da = g
        dz = da * (cache["z"] > 0.0) if blk.relu else da
        grads[f"block{i}.w"] = cache["x"].T @ dz
        grads[f"block{i}.b"] = dz.sum(axis=0)
        g = dz @ blk.w.T
    return grads, g


def sgd_step(net: Mlp, grads: dict[str, np.ndarray], lr: float) -> None:
    for i, blk in enumerate(net.blocks):
        blk.w -= lr * grads[f"block{i}.w"]
        blk.b -= lr * grads[f"block{i}.b"]
        if blk.bn:
            blk.gamma -= lr * grads[f"block{i}.gamma"]
            blk.beta -= lr * grads[f"block{i}.beta"]


def mse_loss(pred: np.ndarray, target: np.ndarray):
    diff = pred - target
    loss = float((diff**2).mean())
    if not np.isfinite(loss):
        raise NonFiniteLoss("loss is not finite")
    return loss, 2.0 * diff / diff.size


def grad_check(net: Mlp, x: np.ndarray, tolerance: float = 1e-4, target: np.ndarray | None = None, eps: float = 1e-4):
    """Central-finite-difference check of every parameter gradient.

    Returns a report dict: max_rel_err, worst parameter, pass flag. Uses a
    fixed MSE objective in train mode so batch statistics are exercised.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if target is None:
        rng = np.random.default_rng(1234)
        target = rng.standard_normal((x.shape[0], net.d_out))

    def loss_only() -> float:
        run = [(blk.run_mean.copy(), blk.run_var.copy()) if blk.bn else None for blk in net.blocks]
        out, _ = forward(net, x, train=True)
        for blk, saved in zip(net.blocks, run):
            if saved is not None:
                blk.run_mean, blk.run_var = saved
        return mse_loss(out, target)[0]

    out, caches = forward(net, x, train=True)
    _, gout = mse_loss(out, target)
    grads, _ = backward(net, caches, gout)

    max_rel = 0.0
    worst = ""
    per_param = {}
    for i, name in net.parameter_names():
        arr = net.get_param((i, name))
        g_analytic = grads[f"block{i}.{name}"]
        flat = arr.ravel()
        ga = g_analytic.ravel()
        g_fd = np.empty_like(ga)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            f_plus = loss_only()
            flat[j] = orig - eps
            f_minus = loss_only()
            flat[j] = orig
            g_fd[j] = (f_plus - f_minus) / (2 * eps)
        denom = np.maximum(np.abs(ga) + np.abs(g_fd), 1e-8)
        rel = float((np.abs(ga - g_fd) / denom).max())
        per_param[f"block{i}.{name}"] = rel
        if rel > max_rel:
            max_rel, worst = rel, f"block{i}.{name}"
    return {"max_rel_err": max_rel, "worst": worst, "passed": max_rel < tolerance, "per_param": per_param}


def train_regression(net: Mlp, x: np.ndarray, y: np.ndarray, cfg: TrainConfig, log_every: int = 0):
    """Minimal SGD regression loop (used by smoke tests and baselines).
    Returns the per-epoch loss history; training is seeded and deterministic."""
    rng = np.random.default_rng(cfg.seed)
    n = len(x)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2:
                continue  # batch norm needs >= 2 rows
            out, caches = forward(net, x[idx], train=True)
            loss, gout = mse_loss(out, y[idx])
            grads, _ = backward(net, caches, gout)
            sgd_step(net, grads, cfg.lr)
            total += loss * len(idx)
        history.append(total / n)
    return history
