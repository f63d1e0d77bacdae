"""MCMC for the NNCGP model.

Gibbs updates for the latent fields, trend coefficients, scale coefficients
and both variances, plus a log-scale random-walk Metropolis-Hastings step for
the range parameters.

Two flavours of conditionals are available through ``SamplerConfig.conditionals``:

``"full"`` (default)
    Exact full conditionals of the joint posterior. A latent site collects
    the prior terms of every site that lists it as a neighbor, and every block
    collects the likelihood of every level it feeds through the autoregression.
``"local"``
    Level-local conditionals: each block only sees its own level's data and a
    latent site only its own neighbor factor. Cheaper bookkeeping, but not a
    valid Gibbs kernel for the joint posterior.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular
from scipy.sparse.linalg import spsolve_triangular

from .geometry import FidelityDataset
from .model import (
    BasisSpec,
    LatentState,
    LevelParams,
    LevelPrior,
    NNCGPModel,
    compose_levels,
    log_joint,
)
from .nngp import NNGPFactors, conditional_means, factor_matrix, nngp_log_density

PARAM_BLOCKS = ("w", "beta", "gamma", "sigma2", "tau2", "phi")
DENSE_SOLVE_MAX = 400


class SamplerError(RuntimeError):
    pass


@dataclass
class SamplerConfig:
    n_iter: int = 35000
    burn_in: int = 5000
    thin: int = 1
    mh_step: float = 0.1
    adapt: bool = True
    seed: int = 0
    conditionals: str = "full"
    target_accept: float = 0.35
    store_latent: bool = True
    progress_every: int = 0
    shift_moves: bool = True

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError(f"need 0 <= burn_in < n_iter, got burn_in={self.burn_in}, n_iter={self.n_iter}")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not self.mh_step > 0:
            raise ValueError("mh_step must be positive")
        if self.conditionals not in ("full", "local"):
            raise ValueError(f"conditionals must be 'full' or 'local', got {self.conditionals!r}")

    @property
    def n_retained(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin


@dataclass
class ChainTrace:
    """Retained draws. Latent snapshots are in graph order of each level."""

    model: NNCGPModel
    iterations: np.ndarray
    beta: list[np.ndarray]
    gamma: list[np.ndarray]
    sigma2: list[np.ndarray]
    phi: list[np.ndarray]
    tau2: list[np.ndarray]
    latent: list[np.ndarray] | None
    accepted: np.ndarray
    proposed: np.ndarray
    mh_step: list[np.ndarray] = field(default_factory=list)
    config: SamplerConfig | None = None

    def __len__(self) -> int:
        return int(self.iterations.shape[0])

    @property
    def T(self) -> int:
        return len(self.beta)

    @property
    def acceptance_rate(self) -> np.ndarray:
        return self.accepted / np.maximum(self.proposed, 1)

    def params_at(self, r: int) -> list[LevelParams]:
        return [LevelParams(self.beta[t][r], self.gamma[t][r], self.sigma2[t][r],
                            self.phi[t][r], self.tau2[t][r]) for t in range(self.T)]

    def mean_params(self) -> list[LevelParams]:
        return [LevelParams(self.beta[t].mean(0), self.gamma[t].mean(0), self.sigma2[t].mean(),
                            self.phi[t].mean(0), self.tau2[t].mean()) for t in range(self.T)]

    def interval(self, name: str, level: int, q=(0.025, 0.975)) -> np.ndarray:
        """Equal-tail credible interval of a parameter block at a 1-based level."""
        draws = getattr(self, name)[level - 1]
        return np.quantile(draws, q, axis=0)


def _inv_gamma(rng: np.random.Generator, shape: float, rate: float) -> float:
    if not rate > 0:
        raise SamplerError(f"non-positive inverse-gamma rate {rate}")
    return float(rate / rng.standard_gamma(shape))


def conjugate_normal(prior_mean, prior_cov, designs, residuals, noise_vars, prior_prec=None):
    """Posterior of x under ``r_k ~ N(X_k x, v_k I)`` and ``x ~ N(m, V)``.

    Returns ``(mean, cov, root)`` with ``root @ root.T == cov``.
    """
    if prior_prec is None:
        prior_prec = np.linalg.inv(prior_cov)
    prec = prior_prec.copy()
    lin = prior_prec @ prior_mean
    for x, r, v in zip(designs, residuals, noise_vars):
        prec += x.T @ x / v
        lin += x.T @ r / v
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        raise SamplerError("posterior precision is singular") from None
    # prec = L L^T, so cov = L^{-T} L^{-1}
    root = np.linalg.inv(chol).T
    cov = root @ root.T
    return cov @ lin, cov, root


def _draw_normal(rng, mean, root):
    return mean + root @ rng.standard_normal(mean.shape[0])


class GibbsSampler:
    """Mutable chain state plus one method per full-conditional update.

    ``fixed`` names blocks (``"w"``, ``"beta"``, ``"gamma"``, ``"sigma2"``,
    ``"tau2"``, ``"phi"``) that are held at their initial values.
    """

    def __init__(self, model: NNCGPModel, priors: list[LevelPrior] | None = None,
                 config: SamplerConfig | None = None, init: list[LevelParams] | None = None,
                 latent: list[np.ndarray] | None = None, fixed=()):
        self.model = model
        self.T = model.T
        self.priors = priors if priors is not None else model.default_priors()
        self.config = config if config is not None else SamplerConfig()
        unknown = set(fixed) - set(PARAM_BLOCKS)
        if unknown:
            raise ValueError(f"unknown fixed blocks {sorted(unknown)}; choose from {PARAM_BLOCKS}")
        self.fixed = frozenset(fixed)
        self.params = [p.copy() for p in init] if init is not None else model.initial_params(self.priors)
        model.validate(self.params, self.priors)
        if latent is None:
            self.w = [np.zeros(lay.n) for lay in model.layouts]
        else:
            self.w = [np.array(v, dtype=np.float64) for v in latent]
        self.z = [lay.z.copy() for lay in model.layouts]
        root = np.random.SeedSequence(self.config.seed)
        self.rngs = [np.random.Generator(np.random.Philox(s)) for s in root.spawn(self.T)]
        self.log_step = [np.full(model.dim, np.log(self.config.mh_step)) for _ in range(self.T)]
        self.accepted = np.zeros(self.T, dtype=np.int64)
        self.proposed = np.zeros(self.T, dtype=np.int64)
        self._n_adapt = np.zeros(self.T, dtype=np.int64)
        self._corr: list[NNGPFactors] = [None] * self.T
        self._imb: list[sp.csr_matrix] = [None] * self.T
        self._prec: list[sp.csr_matrix] = [None] * self.T
        self._blocks: list[dict] = [{} for _ in range(self.T)]
        self._prior_prec: list[dict] = [{} for _ in range(self.T)]
        for t in range(self.T):
            self._set_phi(t, self.params[t].phi, model.correlation_factors(t, self.params[t].phi))
        self.y = compose_levels(self.w, self.params, model)
        self.iteration = 0

    # ------------------------------------------------------------------ helpers
    @property
    def full(self) -> bool:
        return self.config.conditionals == "full"

    def _set_phi(self, t, phi, corr: NNGPFactors):
        self.params[t].phi = np.array(phi, dtype=np.float64)
        self._corr[t] = corr
        self._imb[t] = factor_matrix(corr, self.model.layouts[t].graph)
        self._prec[t] = None
        self._blocks[t] = {}

    def _precision(self, t) -> sp.csr_matrix:
        # correlation-scale prior precision (I - B)^T F~^{-1} (I - B), rebuilt lazily
        if self._prec[t] is None:
            a = self._imb[t]
            self._prec[t] = (a.T @ sp.diags(1.0 / self._corr[t].f) @ a).tocsr()
        return self._prec[t]

    def factors(self, t) -> NNGPFactors:
        return self._corr[t].scaled(self.params[t].sigma2)

    def set_observations(self, t: int, z: np.ndarray):
        """Replace level ``t``'s (0-based) observed values, keeping the site layout."""
        z = np.asarray(z, dtype=np.float64)
        if z.shape != self.z[t].shape:
            raise ValueError("observation vector has the wrong length")
        self.z[t] = z.copy()

    def recompose(self):
        self.y = compose_levels(self.w, self.params, self.model)

    def state(self) -> LatentState:
        return LatentState([w.copy() for w in self.w], [y.copy() for y in self.y])

    def log_joint(self) -> float:
        return log_joint(LatentState(self.w), self.params, self.priors, self.model,
                         [self.factors(t) for t in range(self.T)], z=self.z)

    def _prior_precision(self, k: int, name: str) -> np.ndarray:
        # cached against the bytes of the prior covariance, which callers may replace
        cov = getattr(self.priors[k], f"{name}_cov")
        key = cov.tobytes()
        hit = self._prior_prec[k].get(name)
        if hit is None or hit[0] != key:
            hit = (key, np.linalg.inv(cov) if cov.size else cov.copy())
            self._prior_prec[k][name] = hit
        return hit[1]

    def _zeta_at(self, j: int, level: int) -> np.ndarray:
        """Scale multiplier into level ``j`` (0-based) at the sites of 0-based level ``level``."""
        lay = self.model.layouts[j]
        return lay.G[lay.pos_of[level + 1]] @ self.params[j].gamma

    def _chain(self, k: int, t: int) -> np.ndarray:
        """Coefficient of ``y_k`` in ``y_t`` at the sites of level ``t`` (t >= k)."""
        c = np.ones(self.model.layouts[t].n_obs)
        for j in range(k + 1, t + 1):
            c = c * self._zeta_at(j, t)
        return c

    def _residual(self, t: int) -> np.ndarray:
        return self.z[t] - self.y[t][self.model.layouts[t].own_pos]

    def _data_levels(self, k: int) -> range:
        return range(k, self.T) if self.full else range(k, k + 1)

    # ------------------------------------------------------------------ latent
    def _latent_data_terms(self, k: int):
        """Per-site data precision and linear term for the latent field of level k."""
        n = self.model.layouts[k].n
        prec = np.zeros(n)
        lin = np.zeros(n)
        w = self.w[k]
        for t in self._data_levels(k):
            pos = self.model.layouts[k].pos_of[t + 1]
            c = self._chain(k, t)
            partial = self._residual(t) + c * w[pos]
            tau2 = self.params[t].tau2
            np.add.at(prec, pos, c * c / tau2)
            np.add.at(lin, pos, c * partial / tau2)
        return prec, lin

    def _sweep_blocks(self, k: int, key: str, rows: np.ndarray):
        """Pieces of the correlation precision split by the flagged rows, cached per phi."""
        cache = self._blocks[k]
        if key not in cache:
            q = self._precision(k)
            f = np.flatnonzero(rows)
            u = np.flatnonzero(~rows)
            lower_f = sp.tril(q, format="csr")[f]
            ff = lower_f[:, f].tocsr()
            ff.sort_indices()
            fu = lower_f[:, u].tocsr()
            upper = sp.triu(q, 1, format="csr")[f]
            diag_pos = np.array([ff.indptr[i] + np.searchsorted(ff.indices[ff.indptr[i]:ff.indptr[i + 1]], i)
                                 for i in range(f.size)], dtype=np.int64)
            dense = ff.toarray() if f.size <= DENSE_SOLVE_MAX else None
            cache[key] = (f, u, ff, fu, upper, q.diagonal()[f], diag_pos, dense)
        return cache[key]

    def _sweep(self, k: int, rows: np.ndarray, key: str):
        """One single-site Gibbs sweep, in graph order, over the sites flagged in ``rows``."""
        if not rows.any():
            return
        rng = self.rngs[k]
        sigma2 = self.params[k].sigma2
        w_old = self.w[k]
        d_prec, d_lin = self._latent_data_terms(k)
        eps = rng.standard_normal(w_old.shape[0])
        if self.full:
            # Gauss-Seidel form: (L/sigma2 + D) w_new = d_lin - U w_old / sigma2 + sqrt(diag) eps,
            # restricted to the flagged rows with the other sites held at their current values
            f, u, ff, fu, upper, pdiag, diag_pos, dense = self._sweep_blocks(k, key, rows)
            diag = pdiag / sigma2 + d_prec[f]
            rhs = (d_lin[f] - (upper @ w_old) / sigma2 + np.sqrt(diag) * eps[f]
                   - (fu @ w_old[u]) / sigma2)
            if dense is not None:
                mat = dense / sigma2
                mat[np.diag_indices(f.size)] += d_prec[f]
                new = solve_triangular(mat, rhs, lower=True, check_finite=False)
            else:
                data = ff.data / sigma2
                data[diag_pos] += d_prec[f]
                mat = sp.csr_matrix((data, ff.indices, ff.indptr), shape=ff.shape)
                new = np.asarray(spsolve_triangular(mat, rhs, lower=True)).reshape(-1)
            w_new = w_old.copy()
            w_new[f] = new
            self.w[k] = w_new
        else:
            u = rows.astype(np.float64)
            f = self._corr[k].f * sigma2
            q = 1.0 / f + d_prec
            a = 1.0 / (q * f)
            b = sp.identity(w_old.shape[0], format="csr") - self._imb[k]
            rhs = d_lin / q + eps / np.sqrt(q)
            mat = sp.identity(w_old.shape[0], format="csr") - sp.diags(u * a) @ b
            rhs = u * rhs + (1.0 - u) * w_old
            self.w[k] = np.asarray(spsolve_triangular(mat.tocsr(), rhs, lower=True)).reshape(-1)
        self.recompose()

    def update_w_star(self, k: int):
        """Redraw the latent interpolants (sites of higher levels missing at level k)."""
        lay = self.model.layouts[k]
        self._sweep(k, ~lay.own_mask, "star")

    def update_w(self, k: int):
        """Redraw the latent field at the observed sites of level k."""
        self._sweep(k, self.model.layouts[k].own_mask, "own")

    # ------------------------------------------------------------------ shift moves
    def _shift(self, k: int, coef_name: str, directions: np.ndarray):
        """Translate a coefficient against the latent field, leaving every ``y`` unchanged.

        Moving ``coef[j] += c`` and ``w_k -= c * directions[:, j]`` keeps the
        likelihood fixed, so ``c`` has a Gaussian conditional from the
        coefficient prior and the NNGP prior of ``w_k`` alone. This breaks the
        strong posterior coupling between an intercept (or scale) and the
        field it is added to, which single-site sweeps resolve very slowly.
        """
        pr = self.priors[k]
        mean = pr.beta_mean if coef_name == "beta" else pr.gamma_mean
        prior_prec = self._prior_precision(k, coef_name)
        p_mat = self._precision(k)
        sigma2 = self.params[k].sigma2
        for j in range(directions.shape[1]):
            coef = getattr(self.params[k], coef_name)
            v = directions[:, j]
            pv = p_mat @ v
            a = prior_prec[j, j] + float(v @ pv) / sigma2
            b = -float(prior_prec[j] @ (coef - mean)) + float(self.w[k] @ pv) / sigma2
            if not a > 0:
                continue
            c = b / a + self.rngs[k].standard_normal() / np.sqrt(a)
            coef = coef.copy()
            coef[j] += c
            setattr(self.params[k], coef_name, coef)
            self.w[k] = self.w[k] - c * v
        self.recompose()

    def update_shift(self, k: int):
        lay = self.model.layouts[k]
        if "beta" not in self.fixed:
            self._shift(k, "beta", lay.H)
        if k > 0 and "gamma" not in self.fixed:
            y_low = self.y[k - 1][lay.lower_pos]
            self._shift(k, "gamma", lay.G * y_low[:, None])

    # ------------------------------------------------------------------ regression blocks
    def beta_conditional(self, k: int):
        lay = self.model.layouts[k]
        beta = self.params[k].beta
        designs, resid, noise = [], [], []
        for t in self._data_levels(k):
            x = self._chain(k, t)[:, None] * lay.H[lay.pos_of[t + 1]]
            designs.append(x)
            resid.append(self._residual(t) + x @ beta)
            noise.append(self.params[t].tau2)
        pr = self.priors[k]
        return conjugate_normal(pr.beta_mean, pr.beta_cov, designs, resid, noise, self._prior_precision(k, "beta"))

    def update_beta(self, k: int):
        mean, _, root = self.beta_conditional(k)
        self.params[k].beta = _draw_normal(self.rngs[k], mean, root)
        self.recompose()

    def gamma_conditional(self, k: int):
        if k < 1:
            raise ValueError("level 1 has no scale discrepancy")
        lay = self.model.layouts[k]
        below = self.model.layouts[k - 1]
        gamma = self.params[k].gamma
        designs, resid, noise = [], [], []
        for t in self._data_levels(k):
            y_low = self.y[k - 1][below.pos_of[t + 1]]
            x = (self._chain(k, t) * y_low)[:, None] * lay.G[lay.pos_of[t + 1]]
            designs.append(x)
            resid.append(self._residual(t) + x @ gamma)
            noise.append(self.params[t].tau2)
        pr = self.priors[k]
        return conjugate_normal(pr.gamma_mean, pr.gamma_cov, designs, resid, noise, self._prior_precision(k, "gamma"))

    def update_gamma(self, k: int):
        mean, _, root = self.gamma_conditional(k)
        self.params[k].gamma = _draw_normal(self.rngs[k], mean, root)
        self.recompose()

    # ------------------------------------------------------------------ variances
    def sigma2_conditional(self, k: int) -> tuple[float, float]:
        graph = self.model.layouts[k].graph
        corr = self._corr[k]
        r = self.w[k] - conditional_means(self.w[k], corr, graph)
        pr = self.priors[k]
        return pr.sigma2_shape + 0.5 * graph.n, pr.sigma2_rate + 0.5 * float(np.sum(r * r / corr.f))

    def update_sigma2(self, k: int):
        a, b = self.sigma2_conditional(k)
        self.params[k].sigma2 = _inv_gamma(self.rngs[k], a, b)

    def tau2_conditional(self, k: int) -> tuple[float, float]:
        r = self._residual(k)
        pr = self.priors[k]
        return pr.tau2_shape + 0.5 * r.shape[0], pr.tau2_rate + 0.5 * float(r @ r)

    def update_tau2(self, k: int):
        a, b = self.tau2_conditional(k)
        self.params[k].tau2 = _inv_gamma(self.rngs[k], a, b)

    # ------------------------------------------------------------------ range parameters
    def phi_log_target(self, k: int, phi, corr: NNGPFactors | None = None) -> float:
        """Log of p(phi) p~(w~ | sigma2, phi) plus the log-scale Jacobian."""
        phi = np.asarray(phi, dtype=np.float64)
        if np.any(phi <= 0) or np.any(phi >= self.priors[k].phi_upper):
            return -np.inf
        if corr is None:
            corr = self.model.correlation_factors(k, phi)
        fac = corr.scaled(self.params[k].sigma2)
        return nngp_log_density(self.w[k], fac, self.model.layouts[k].graph) + float(np.sum(np.log(phi)))

    def update_phi(self, k: int, adapt: bool = False) -> bool:
        rng = self.rngs[k]
        phi = self.params[k].phi
        step = np.exp(self.log_step[k])
        prop = np.exp(np.log(phi) + step * rng.standard_normal(phi.shape[0]))
        log_u = np.log(rng.uniform())
        self.proposed[k] += 1
        accepted = False
        if np.all(prop < self.priors[k].phi_upper):
            try:
                corr = self.model.correlation_factors(k, prop)
            except np.linalg.LinAlgError:
                corr = None
            if corr is not None:
                cur = self.phi_log_target(k, phi, self._corr[k])
                new = self.phi_log_target(k, prop, corr)
                if log_u < new - cur:
                    self._set_phi(k, prop, corr)
                    accepted = True
        if accepted:
            self.accepted[k] += 1
        if adapt:
            self._n_adapt[k] += 1
            gain = 1.0 / self._n_adapt[k] ** 0.6
            self.log_step[k] = self.log_step[k] + gain * (float(accepted) - self.config.target_accept)
        return accepted

    # ------------------------------------------------------------------ driver
    def step(self):
        """One full scan: per level w*, w, shift, beta, gamma, tau2, sigma2, phi."""
        self.iteration += 1
        adapt = self.config.adapt and self.iteration <= self.config.burn_in
        updates = (
            ("w_star", "w", lambda k: self.update_w_star(k) if k < self.T - 1 else None),
            ("w", "w", self.update_w),
            ("shift", "w", lambda k: self.update_shift(k) if self.config.shift_moves else None),
            ("beta", "beta", self.update_beta),
            ("gamma", "gamma", lambda k: self.update_gamma(k) if k > 0 else None),
            ("tau2", "tau2", self.update_tau2),
            ("sigma2", "sigma2", self.update_sigma2),
            ("phi", "phi", lambda k: self.update_phi(k, adapt)),
        )
        for k in range(self.T):
            for name, block, fn in updates:
                if block in self.fixed:
                    continue
                try:
                    fn(k)
                except Exception as exc:
                    raise SamplerError(
                        f"iteration {self.iteration}, level {k + 1}, update {name}: {exc}"
                    ) from exc

    def _report(self):
        rates = (self.accepted / np.maximum(self.proposed, 1)).round(4).tolist()
        line = {"iter": self.iteration, "log_joint": self.log_joint(), "acceptance": rates}
        sys.stderr.write(json.dumps(line) + "\n")

    def run(self) -> ChainTrace:
        cfg = self.config
        n_keep = cfg.n_retained
        lays = self.model.layouts
        beta = [np.empty((n_keep, self.model.n_beta(t))) for t in range(self.T)]
        gamma = [np.empty((n_keep, self.model.n_gamma(t))) for t in range(self.T)]
        sigma2 = [np.empty(n_keep) for _ in range(self.T)]
        phi = [np.empty((n_keep, self.model.dim)) for _ in range(self.T)]
        tau2 = [np.empty(n_keep) for _ in range(self.T)]
        latent = [np.empty((n_keep, lay.n)) for lay in lays] if cfg.store_latent else None
        iters = np.empty(n_keep, dtype=np.int64)
        r = 0
        for _ in range(cfg.n_iter):
            self.step()
            it = self.iteration
            if cfg.progress_every and it % cfg.progress_every == 0:
                self._report()
            if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0 and r < n_keep:
                iters[r] = it
                for t, p in enumerate(self.params):
                    beta[t][r] = p.beta
                    gamma[t][r] = p.gamma
                    sigma2[t][r] = p.sigma2
                    phi[t][r] = p.phi
                    tau2[t][r] = p.tau2
                    if latent is not None:
                        latent[t][r] = self.w[t]
                r += 1
        return ChainTrace(self.model, iters, beta, gamma, sigma2, phi, tau2, latent,
                          self.accepted.copy(), self.proposed.copy(),
                          [np.exp(s) for s in self.log_step], cfg)


def run_chain(data, priors: list[LevelPrior] | None = None, config: SamplerConfig | None = None,
              *, m: int = 10, bases: list[BasisSpec] | None = None,
              init: list[LevelParams] | None = None, latent=None, fixed=()) -> ChainTrace:
    """Fit the NNCGP model by MCMC.

    ``data`` is either a list of :class:`FidelityDataset` (levels 1..T) or a
    prebuilt :class:`NNCGPModel`.
    """
    if isinstance(data, NNCGPModel):
        model = data
    else:
        datasets = list(data)
        if not all(isinstance(ds, FidelityDataset) for ds in datasets):
            raise TypeError("data must be an NNCGPModel or a list of FidelityDataset")
        model = NNCGPModel(datasets, m=m, bases=bases)
    sampler = GibbsSampler(model, priors, config, init=init, latent=latent, fixed=fixed)
    return sampler.run()
