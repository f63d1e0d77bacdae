"""Diagonal anisotropic exponential covariance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

JITTER = 1e-10


@dataclass(frozen=True)
class KernelParams:
    """Variance ``sigma2`` and per-axis range parameters ``phi``."""

    sigma2: float
    phi: np.ndarray

    def __post_init__(self):
        phi = np.atleast_1d(np.asarray(self.phi, dtype=np.float64))
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValueError(f"sigma2 must be positive and finite, got {self.sigma2}")
        if phi.ndim != 1 or not np.all(np.isfinite(phi)) or np.any(phi <= 0):
            raise ValueError(f"phi components must be positive and finite, got {phi}")
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "phi", phi)

    @property
    def dim(self) -> int:
        return self.phi.shape[0]


def _check_dim(d: int, p: KernelParams):
    if d != p.dim:
        raise ValueError(f"dimension mismatch: locations have d={d}, phi has {p.dim} components")


def correlation(diff: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """exp(-1/2 sum_i |diff_i| / phi_i) over the last axis of ``diff``."""
    return np.exp(-0.5 * np.sum(np.abs(diff) / phi, axis=-1))


def kernel(s, s2, p: KernelParams) -> float:
    """sigma2 * exp(-1/2 * sum_i |s_i - s2_i| / phi_i)."""
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    s2 = np.atleast_1d(np.asarray(s2, dtype=np.float64))
    if s.shape != s2.shape:
        raise ValueError(f"dimension mismatch: {s.shape[0]} vs {s2.shape[0]}")
    _check_dim(s.shape[0], p)
    return float(p.sigma2 * correlation(s - s2, p.phi))


def cross_cov(a, b, p: KernelParams) -> np.ndarray:
    """Matrix ``M[i, j] = kernel(a[i], b[j])``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None] if p.dim == 1 else a[None, :]
    if b.ndim == 1:
        b = b[:, None] if p.dim == 1 else b[None, :]
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("cross_cov needs nonempty location lists")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    _check_dim(a.shape[1], p)
    return p.sigma2 * correlation(a[:, None, :] - b[None, :, :], p.phi)


def cholesky_jittered(cov: np.ndarray, sigma2: float = 1.0) -> np.ndarray:
    """Lower Cholesky factor; on failure retries once with ``1e-10 * sigma2`` added to the diagonal."""
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        pass
    bumped = cov + JITTER * sigma2 * np.eye(cov.shape[0])
    try:
        return linalg.cholesky(bumped, lower=True)
    except linalg.LinAlgError:
        raise linalg.LinAlgError(
            "covariance matrix is not positive definite even after diagonal jitter"
        ) from None
