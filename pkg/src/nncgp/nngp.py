"""Nearest-neighbor GP conditional factors and the approximate log-density.

All per-point arrays here are indexed by *position* in the graph order, i.e.
entry ``i`` belongs to ``coords[graph.order[i]]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from .covariance import JITTER, KernelParams, correlation
from .geometry import NeighborGraph, as_coords

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class NNGPFactors:
    """Rows ``b`` (zero in padded slots) and conditional variances ``f``."""

    b: np.ndarray
    f: np.ndarray

    def scaled(self, c: float) -> "NNGPFactors":
        # b only depends on correlations, f is linear in the variance
        return NNGPFactors(self.b, self.f * c)


def _gather(w: np.ndarray, nbrs: np.ndarray) -> np.ndarray:
    return w[np.where(nbrs >= 0, nbrs, 0)]


def _assemble(pts_i, pts_n, valid, phi):
    """Padded neighbor correlation matrices (identity in unused slots) and cross terms."""
    m = pts_n.shape[1]
    c_nn = correlation(pts_n[:, :, None, :] - pts_n[:, None, :, :], phi)
    pair_ok = valid[:, :, None] & valid[:, None, :]
    c_nn = np.where(pair_ok, c_nn, np.eye(m)[None])
    c_in = np.where(valid, correlation(pts_n - pts_i[:, None, :], phi), 0.0)
    return c_nn, c_in


def _solve(c_nn, c_in, c_ii=1.0):
    chol = np.linalg.cholesky(c_nn)
    u = np.linalg.solve(chol, c_in[:, :, None])
    b = np.linalg.solve(np.swapaxes(chol, 1, 2), u)[:, :, 0]
    f = c_ii - np.sum(u[:, :, 0] ** 2, axis=1)
    return b, f


def _factor_rows(pts_i, pts_n, valid, phi, offset):
    c_nn, c_in = _assemble(pts_i, pts_n, valid, phi)
    try:
        b, f = _solve(c_nn, c_in)
        if np.all(f > 0):
            return b, f
    except np.linalg.LinAlgError:
        pass
    # row by row, with a single diagonal-jitter retry
    b = np.zeros(valid.shape)
    f = np.empty(valid.shape[0])
    for r in range(valid.shape[0]):
        row = slice(r, r + 1)
        try:
            br, fr = _solve(c_nn[row], c_in[row])
            if fr[0] <= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            bumped = c_nn[row] + JITTER * np.eye(c_nn.shape[1])
            try:
                br, fr = _solve(bumped, c_in[row], 1.0 + JITTER)
            except np.linalg.LinAlgError:
                raise np.linalg.LinAlgError(
                    f"neighbor covariance of ordered index {offset + r} is not positive definite"
                ) from None
            if fr[0] <= 0:
                raise np.linalg.LinAlgError(
                    f"nonpositive conditional variance at ordered index {offset + r}"
                )
        b[r], f[r] = br[0], fr[0]
    return b, f


def neighbor_factors(targets, ref_coords, nbrs, phi, chunk: int = 4096) -> NNGPFactors:
    """Unit-variance factors of ``targets[i]`` given ``ref_coords[nbrs[i]]`` (``-1`` = unused slot)."""
    targets = as_coords(targets)
    ref_coords = as_coords(ref_coords)
    phi = np.asarray(phi, dtype=np.float64)
    n, m = nbrs.shape
    b = np.zeros((n, m))
    f = np.ones(n)
    if m == 0:
        return NNGPFactors(b, f)
    for a in range(0, n, chunk):
        e = min(n, a + chunk)
        nb = nbrs[a:e]
        valid = nb >= 0
        pts_n = ref_coords[np.where(valid, nb, 0)]
        b[a:e], f[a:e] = _factor_rows(targets[a:e], pts_n, valid, phi, a)
    return NNGPFactors(b, f)


def correlation_factors(graph: NeighborGraph, coords, phi) -> NNGPFactors:
    """Factors with unit variance; multiply ``f`` by sigma^2 for the covariance form."""
    pts = as_coords(coords)[graph.order]
    return neighbor_factors(pts, pts, graph.neighbors, phi)


def compute_factors(graph: NeighborGraph, coords, p: KernelParams) -> NNGPFactors:
    """``b_i = C_{i,N}^T C_N^{-1}`` and ``f_i = C_ii - b_i C_{N,i}`` for every ordered index."""
    coords = as_coords(coords)
    if coords.shape[1] != p.dim:
        raise ValueError(f"dimension mismatch: locations d={coords.shape[1]}, phi has {p.dim}")
    return correlation_factors(graph, coords, p.phi).scaled(p.sigma2)


def conditional_means(w: np.ndarray, factors: NNGPFactors, graph: NeighborGraph) -> np.ndarray:
    return np.sum(factors.b * _gather(w, graph.neighbors), axis=1)


def nngp_log_density(w, factors: NNGPFactors, graph: NeighborGraph) -> float:
    """Sum over ordered indices of log N(w_i | b_i . w_N(i), f_i)."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (graph.n,):
        raise ValueError(f"w has shape {w.shape}, graph has {graph.n} points")
    r = w - conditional_means(w, factors, graph)
    return float(-0.5 * np.sum(LOG_2PI + np.log(factors.f) + r * r / factors.f))


def factor_matrix(factors: NNGPFactors, graph: NeighborGraph) -> sp.csr_matrix:
    """Sparse unit lower-triangular ``I - B`` in graph positions."""
    n, m = graph.neighbors.shape
    valid = graph.neighbors >= 0
    rows = np.concatenate([np.arange(n), np.repeat(np.arange(n), m)[valid.ravel()]])
    cols = np.concatenate([np.arange(n), graph.neighbors[valid]])
    vals = np.concatenate([np.ones(n), -factors.b[valid]])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def precision_matrix(factors: NNGPFactors, graph: NeighborGraph) -> sp.csr_matrix:
    """Sparse ``(I - B)^T F^{-1} (I - B)``, the precision implied by the factors."""
    a = factor_matrix(factors, graph)
    return (a.T @ sp.diags(1.0 / factors.f) @ a).tocsr()


def sparse_precision_nnz(factors: NNGPFactors | None, graph: NeighborGraph,
                         include_diagonal: bool = False) -> int:
    """Structural nonzeros in the lower triangle of ``(I - B)^T F^{-1} (I - B)``.

    Entry ``(i, j)`` is structurally nonzero when ``i`` and ``j`` both belong to
    ``{k} ∪ N(k)`` for some ``k``. The strict lower triangle is bounded by
    ``n m (m + 1) / 2``; ``include_diagonal`` adds the ``n`` diagonal entries.
    """
    n = graph.n
    codes = []
    for k in range(n):
        clique = np.array([k] + graph.neighbor_list(k), dtype=np.int64)
        hi = np.maximum.outer(clique, clique)
        lo = np.minimum.outer(clique, clique)
        strict = hi != lo
        codes.append(hi[strict] * n + lo[strict])
    strict_count = np.unique(np.concatenate(codes)).size if codes else 0
    return int(strict_count + (n if include_diagonal else 0))


def sample_nngp(factors: NNGPFactors, graph: NeighborGraph, rng: np.random.Generator,
                size: int | None = None) -> np.ndarray:
    """Draw from the NNGP joint by sequential conditioning (one triangular solve)."""
    n = graph.n
    k = 1 if size is None else size
    eps = rng.standard_normal((n, k)) * np.sqrt(factors.f)[:, None]
    a = factor_matrix(factors, graph)
    w = spsolve_triangular(a, eps, lower=True)
    w = np.asarray(w).reshape(n, k)
    return w[:, 0] if size is None else w.T
