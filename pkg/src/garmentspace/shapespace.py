"""PCA shape space over draped garment meshes (one per garment type).

Meshes on the shared reference topology are flattened to 3V-vectors,
mean-centered, and compressed to the leading k principal directions.
The SVD sign ambiguity is fixed by making each component's
largest-magnitude entry positive, so fits are reproducible bit-for-bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class DimensionMismatch(Exception):
    pass


class RankDeficient(UserWarning):
    """Requested more components than the data's numerical rank."""


@dataclass(eq=False)
class PcaModel:
    mean: np.ndarray  # (3V,)
    basis: np.ndarray  # (k, 3V), orthonormal rows
    singular_values: np.ndarray  # (k,), nonincreasing
    k: int
    n_train: int
    truncated: bool = False  # k was cut to the numerical rank

    @property
    def n_coords(self) -> int:
        return self.mean.shape[0]


def _as_matrix(meshes) -> np.ndarray:
    if isinstance(meshes, np.ndarray):
        x = meshes
    else:
        x = np.stack([np.asarray(m.positions if hasattr(m, "positions") else m) for m in meshes])
    if x.ndim == 3:
        x = x.reshape(len(x), -1)
    return np.asarray(x, dtype=np.float64)


def fit(meshes, k: int) -> PcaModel:
    """Mean-centered PCA via SVD; deterministic up to the fixed sign rule."""
    x = _as_matrix(meshes)
    n, d = x.shape
    if n < 2:
        raise ValueError("need at least 2 meshes to fit a shape space")
    if k > min(d, n):
        raise ValueError(f"k={k} exceeds min(3V={d}, N={n})")
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    tol = max(n, d) * np.finfo(np.float64).eps * (s[0] if len(s) else 0.0)
    rank = int((s > tol).sum())
    k_eff = k
    truncated = False
    if k > rank:
        warnings.warn(f"k={k} exceeds numerical rank {rank}; truncating", RankDeficient)
        k_eff = max(rank, 1)
        truncated = True
    basis = vt[:k_eff].copy()
    sv = s[:k_eff].copy()
    # sign convention: largest-magnitude entry of each component positive
    for row in basis:
        j = np.argmax(np.abs(row))
        if row[j] < 0:
            row *= -1.0
    return PcaModel(mean, basis, sv, k_eff, n, truncated)


def project(model: PcaModel, mesh) -> np.ndarray:
    """k-dim coefficient vector of a mesh (or flat (3V,) array)."""
    x = np.asarray(mesh.positions if hasattr(mesh, "positions") else mesh, dtype=np.float64).ravel()
    if x.shape[0] != model.n_coords:
        raise DimensionMismatch(f"expected {model.n_coords} coords, got {x.shape[0]}")
    return model.basis @ (x - model.mean)


def reconstruct(model: PcaModel, coeffs: np.ndarray) -> np.ndarray:
    """(V,3) vertex positions from a coefficient vector."""
    c = np.asarray(coeffs, dtype=np.float64).ravel()
    if c.shape[0] != model.k:
        raise DimensionMismatch(f"expected {model.k} coefficients, got {c.shape[0]}")
    flat = model.mean + c @ model.basis
    return flat.reshape(-1, 3)


def project_batch(model: PcaModel, meshes) -> np.ndarray:
    x = _as_matrix(meshes)
    if x.shape[1] != model.n_coords:
        raise DimensionMismatch(f"expected {model.n_coords} coords, got {x.shape[1]}")
    return (x - model.mean) @ model.basis.T


def reconstruct_batch(model: PcaModel, coeffs: np.ndarray) -> np.ndarray:
    c = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    if c.shape[1] != model.k:
        raise DimensionMismatch(f"expected {model.k} coefficients, got {c.shape[1]}")
    return (model.mean + c @ model.basis).reshape(len(c), -1, 3)


@dataclass(eq=False)
class CoeffNormalizer:
    """Per-component affine map of training coefficients onto [0,1].

    Built from training-set min/max; applied unclamped, so out-of-envelope
    test samples land slightly outside [0,1] by design.
    """

    lo: np.ndarray
    hi: np.ndarray

    @staticmethod
    def fit(coeffs: np.ndarray) -> "CoeffNormalizer":
        c = np.atleast_2d(coeffs)
        lo = c.min(axis=0)
        hi = c.max(axis=0)
        span = hi - lo
        degenerate = span < 1e-12
        hi = np.where(degenerate, lo + 1.0, hi)
        return CoeffNormalizer(lo, hi)

    def normalize(self, coeffs: np.ndarray) -> np.ndarray:
        return (np.asarray(coeffs) - self.lo) / (self.hi - self.lo)

    def denormalize(self, unit: np.ndarray) -> np.ndarray:
        return self.lo + np.asarray(unit) * (self.hi - self.lo)
