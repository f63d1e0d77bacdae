"""Dense, exact co-kriging computations for small instances.

Used as ground truth for the NNGP factors, the sampler and prediction. Not
meant for production sizes: everything here is cubic in the number of sites.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .covariance import KernelParams, cholesky_jittered, cross_cov
from .geometry import FidelityDataset, as_coords
from .model import BasisSpec, LevelParams, design
from .nngp import LOG_2PI

DENSE_CAP = 500


@dataclass
class DenseJoint:
    """Mean ``mu`` and covariance ``lam`` of the stacked observations, ordered by block."""

    mu: np.ndarray
    lam: np.ndarray
    levels: list[int]
    slices: list[slice]

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    def block(self, i: int) -> np.ndarray:
        return np.arange(self.slices[i].start, self.slices[i].stop)


def _blocks(data):
    out = []
    for item in data:
        if isinstance(item, FidelityDataset):
            out.append((item.level, item.coords))
        else:
            level, coords = item
            out.append((int(level), as_coords(coords)))
    return out


def _zeta(params, bases, j, coords):
    # multiplier applied to level j-1 when forming level j (1-based j >= 2)
    return design(bases[j - 1].scale, coords) @ params[j - 1].gamma


def dense_marginal_cov(data, params: list[LevelParams], bases: list[BasisSpec] | None = None,
                       cap: int = DENSE_CAP, nugget: bool = True) -> DenseJoint:
    """Unconditional joint of ``z`` at every block of sites.

    ``data`` holds :class:`FidelityDataset` objects or ``(level, coords)``
    pairs; the same level may appear in several blocks (e.g. training sites
    and prediction targets). The nugget is added on the diagonal of
    same-level, same-site pairs when ``nugget`` is true.
    """
    blocks = _blocks(data)
    T = len(params)
    bases = list(bases) if bases is not None else [BasisSpec() for _ in range(T)]
    sizes = [c.shape[0] for _, c in blocks]
    total = int(sum(sizes))
    if total > cap:
        raise ValueError(f"dense oracle limited to {cap} sites, got {total}")
    for level, _ in blocks:
        if not 1 <= level <= T:
            raise ValueError(f"block level {level} outside 1..{T}")

    # chain[b][i] = prod_{j=i+1}^{t} zeta_j(s) at the sites of block b, i = 1..t
    mu_parts, chains = [], []
    for level, coords in blocks:
        mean = np.zeros(coords.shape[0])
        for t in range(1, level + 1):
            mean = design(bases[t - 1].trend, coords) @ params[t - 1].beta + (
                _zeta(params, bases, t, coords) * mean if t > 1 else 0.0)
        mu_parts.append(mean)
        c = {level: np.ones(coords.shape[0])}
        for i in range(level - 1, 0, -1):
            c[i] = c[i + 1] * _zeta(params, bases, i + 1, coords)
        chains.append(c)

    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    lam = np.zeros((total, total))
    for a, (la, ca) in enumerate(blocks):
        for b, (lb, cb) in enumerate(blocks):
            if b < a:
                continue
            blk = np.zeros((ca.shape[0], cb.shape[0]))
            for i in range(1, min(la, lb) + 1):
                k = KernelParams(params[i - 1].sigma2, params[i - 1].phi)
                blk += chains[a][i][:, None] * chains[b][i][None, :] * cross_cov(ca, cb, k)
            if nugget and la == lb:
                same = np.all(ca[:, None, :] == cb[None, :, :], axis=2)
                blk += params[la - 1].tau2 * same
            ra = slice(offsets[a], offsets[a + 1])
            rb = slice(offsets[b], offsets[b + 1])
            lam[ra, rb] = blk
            lam[rb, ra] = blk.T
    slices = [slice(offsets[i], offsets[i + 1]) for i in range(len(blocks))]
    return DenseJoint(np.concatenate(mu_parts), lam, [lv for lv, _ in blocks], slices)


def gp_joint(coords, p: KernelParams, cap: int = DENSE_CAP) -> DenseJoint:
    """Zero-mean single GP with covariance ``C(S, S)`` and no nugget."""
    coords = as_coords(coords)
    if coords.shape[0] > cap:
        raise ValueError(f"dense oracle limited to {cap} sites, got {coords.shape[0]}")
    n = coords.shape[0]
    return DenseJoint(np.zeros(n), cross_cov(coords, coords, p), [1], [slice(0, n)])


def dense_log_likelihood(z, joint: DenseJoint) -> float:
    """Exact multivariate normal log-density of ``z`` under ``joint``."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape[0] != joint.n:
        raise ValueError(f"z has {z.shape[0]} entries, joint has {joint.n}")
    chol = cholesky_jittered(joint.lam, float(np.mean(np.diag(joint.lam))))
    u = linalg.solve_triangular(chol, z - joint.mu, lower=True)
    return float(-0.5 * (joint.n * LOG_2PI + u @ u) - np.sum(np.log(np.diag(chol))))


def dense_conditional(z_obs, joint: DenseJoint, target_indices, observed_indices=None):
    """Mean and covariance of ``z[target]`` given ``z[observed] = z_obs``.

    ``observed_indices`` defaults to every index not in ``target_indices``.
    """
    tgt = np.asarray(target_indices, dtype=np.int64).reshape(-1)
    if observed_indices is None:
        obs = np.setdiff1d(np.arange(joint.n), tgt)
    else:
        obs = np.asarray(observed_indices, dtype=np.int64).reshape(-1)
    if np.intersect1d(tgt, obs).size:
        raise ValueError("target and observed index sets overlap")
    z_obs = np.asarray(z_obs, dtype=np.float64).reshape(-1)
    if z_obs.shape[0] != obs.shape[0]:
        raise ValueError(f"{z_obs.shape[0]} observed values for {obs.shape[0]} observed indices")
    mu_t = joint.mu[tgt]
    cov_tt = joint.lam[np.ix_(tgt, tgt)]
    if obs.size == 0:
        return mu_t.copy(), cov_tt.copy()
    cov_oo = joint.lam[np.ix_(obs, obs)]
    cov_to = joint.lam[np.ix_(tgt, obs)]
    try:
        cf = linalg.cho_factor(cov_oo, lower=True)
    except linalg.LinAlgError:
        raise linalg.LinAlgError("observed covariance block is singular") from None
    mean = mu_t + cov_to @ linalg.cho_solve(cf, z_obs - joint.mu[obs])
    cov = cov_tt - cov_to @ linalg.cho_solve(cf, cov_to.T)
    return mean, 0.5 * (cov + cov.T)


def simulate_joint(joint: DenseJoint, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    chol = cholesky_jittered(joint.lam, float(np.mean(np.diag(joint.lam))))
    k = 1 if size is None else size
    draws = joint.mu[None, :] + rng.standard_normal((k, joint.n)) @ chol.T
    return draws[0] if size is None else draws


def _corrupt(fac):
    from .nngp import NNGPFactors

    f = fac.f.copy()
    f[-1] *= 1.05
    return NNGPFactors(fac.b, f)


def run_oracle_checks(n: int = 30, seed: int = 0, corrupt: bool = False, tol: float = 1e-8):
    """NNGP-versus-dense equivalence checks; returns ``[(name, passed, detail), ...]``.

    ``corrupt`` inflates one NNGP conditional variance; the three NNGP checks
    must then fail while the purely dense covariance check is unaffected.
    """
    from .geometry import build_neighbor_graph
    from .model import NNCGPModel
    from .nngp import compute_factors, nngp_log_density, precision_matrix
    from .sampler import GibbsSampler, SamplerConfig

    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    coords = rng.uniform(size=(n, 2))
    kp = KernelParams(rng.uniform(0.5, 2.0), rng.uniform(0.05, 0.5, size=2))
    graph = build_neighbor_graph(coords, max(n - 1, 1))
    fac = compute_factors(graph, coords, kp)
    if corrupt:
        fac = _corrupt(fac)
    out = []

    w = rng.standard_normal(n)
    dense = dense_log_likelihood(w, gp_joint(coords, kp))
    approx = nngp_log_density(w[graph.order], fac, graph)
    rel = abs(approx - dense) / max(abs(dense), 1e-300)
    out.append(("nngp_log_density", bool(rel < tol), f"relative error {rel:.3e}"))

    cov = cross_cov(coords[graph.order], coords[graph.order], kp)
    q = precision_matrix(fac, graph).toarray()
    err = np.max(np.abs(q @ cov - np.eye(n)))
    out.append(("precision_inverse", bool(err < 1e-6), f"max |QC - I| {err:.3e}"))

    tau2 = rng.uniform(0.1, 0.5)
    z = 1.0 + rng.standard_normal(n)
    model = NNCGPModel([FidelityDataset(1, coords, z)], m=max(n - 1, 1))
    params = [LevelParams([1.0], [], kp.sigma2, kp.phi, tau2)]
    sampler = GibbsSampler(model, config=SamplerConfig(n_iter=1, burn_in=0), init=params)
    if corrupt:
        sampler._corr[0] = _corrupt(sampler._corr[0])
        sampler._set_phi(0, kp.phi, sampler._corr[0])
    d_prec, d_lin = sampler._latent_data_terms(0)
    qmat = sampler._precision(0).toarray() / kp.sigma2 + np.diag(d_prec)
    mean_nn = np.linalg.solve(qmat, d_lin)
    lay = model.layouts[0]
    zc = lay.z - 1.0
    c_obs = cov[np.ix_(lay.own_pos, lay.own_pos)] + tau2 * np.eye(n)
    mean_dense = cov[:, lay.own_pos] @ np.linalg.solve(c_obs, zc)
    err = np.max(np.abs(mean_nn - mean_dense))
    out.append(("latent_conditional_mean", bool(err < 1e-6), f"max abs error {err:.3e}"))

    p2 = [LevelParams([1.0], [], 1.0, kp.phi, 0.1), LevelParams([0.5], [0.7], 0.5, kp.phi * 2, 0.2)]
    joint = dense_marginal_cov([(2, coords)], p2)
    c1 = cross_cov(coords, coords, KernelParams(1.0, kp.phi))
    c2 = cross_cov(coords, coords, KernelParams(0.5, kp.phi * 2))
    expect = 0.49 * c1 + c2 + 0.2 * np.eye(n)
    err = np.max(np.abs(joint.lam - expect))
    out.append(("two_level_covariance", bool(err < 1e-10), f"max abs error {err:.3e}"))
    return out
