"""Hierarchical NNCGP model: parameters, priors, bases, latent state and the log joint.

Internally every per-level vector over the augmented reference set is stored
in the *graph order* of that level (see :class:`LevelLayout`).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from .covariance import KernelParams
from .geometry import (
    AugmentedReferenceSet,
    FidelityDataset,
    NeighborGraph,
    augment_reference_sets,
    as_coords,
    build_neighbor_graph,
)
from .nngp import LOG_2PI, NNGPFactors, correlation_factors, nngp_log_density

BASIS_KINDS = ("constant", "linear")


def design(kind: str, coords) -> np.ndarray:
    """Basis matrix: a column of ones, optionally followed by the raw coordinates."""
    coords = as_coords(coords)
    ones = np.ones((coords.shape[0], 1))
    if kind == "constant":
        return ones
    if kind == "linear":
        return np.hstack([ones, coords])
    raise ValueError(f"unknown basis {kind!r}; expected one of {BASIS_KINDS}")


def basis_size(kind: str, dim: int) -> int:
    return 1 if kind == "constant" else 1 + dim


@dataclass(frozen=True)
class BasisSpec:
    """Trend basis ``h_t`` and scale-discrepancy basis ``g`` for one level.

    ``scale`` describes the multiplier applied to the level below, so it is
    ignored at level 1.
    """

    trend: str = "constant"
    scale: str = "constant"

    def __post_init__(self):
        for kind in (self.trend, self.scale):
            if kind not in BASIS_KINDS:
                raise ValueError(f"unknown basis {kind!r}; expected one of {BASIS_KINDS}")


@dataclass
class LevelParams:
    beta: np.ndarray
    gamma: np.ndarray
    sigma2: float
    phi: np.ndarray
    tau2: float

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64)).copy()
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=np.float64)).copy()
        self.phi = np.atleast_1d(np.asarray(self.phi, dtype=np.float64)).copy()
        self.sigma2 = float(self.sigma2)
        self.tau2 = float(self.tau2)

    @property
    def kernel(self) -> KernelParams:
        return KernelParams(self.sigma2, self.phi)

    def validate(self, level: int, n_beta: int, n_gamma: int, dim: int):
        if not self.tau2 > 0:
            raise ValueError(f"level {level}: tau2 must be positive, got {self.tau2}")
        KernelParams(self.sigma2, self.phi)
        if self.phi.shape[0] != dim:
            raise ValueError(f"level {level}: phi needs {dim} components, got {self.phi.shape[0]}")
        if self.beta.shape[0] != n_beta:
            raise ValueError(f"level {level}: beta needs {n_beta} entries, got {self.beta.shape[0]}")
        if self.gamma.shape[0] != n_gamma:
            raise ValueError(f"level {level}: gamma needs {n_gamma} entries, got {self.gamma.shape[0]}")

    def copy(self) -> "LevelParams":
        return replace(self)


def _as_cov(v, size: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0:
        return np.eye(size) * float(v)
    if v.ndim == 1:
        return np.diag(v)
    return v


@dataclass
class LevelPrior:
    """Conjugate priors of one level plus the uniform upper bounds on ``phi``.

    ``beta_cov``/``gamma_cov`` accept a scalar, a vector of variances or a
    full covariance matrix.
    """

    beta_mean: np.ndarray
    beta_cov: np.ndarray
    sigma2_shape: float
    sigma2_rate: float
    tau2_shape: float
    tau2_rate: float
    phi_upper: np.ndarray
    gamma_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma_cov: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        self.beta_mean = np.atleast_1d(np.asarray(self.beta_mean, dtype=np.float64))
        self.beta_cov = _as_cov(self.beta_cov, self.beta_mean.shape[0])
        self.gamma_mean = np.atleast_1d(np.asarray(self.gamma_mean, dtype=np.float64))
        self.gamma_cov = _as_cov(self.gamma_cov, self.gamma_mean.shape[0])
        self.phi_upper = np.atleast_1d(np.asarray(self.phi_upper, dtype=np.float64))
        for name in ("sigma2_shape", "sigma2_rate", "tau2_shape", "tau2_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if np.any(self.phi_upper <= 0):
            raise ValueError("phi_upper must be positive")
        for name in ("beta_cov", "gamma_cov"):
            cov = getattr(self, name)
            if cov.size and np.any(np.linalg.eigvalsh(cov) <= 0):
                raise ValueError(f"{name} must be positive definite")


def default_prior(dim: int, n_beta: int = 1, n_gamma: int = 0, *, phi_upper=100.0,
                  variance: float = 1e4, shape: float = 2.0, rate: float = 1.0) -> LevelPrior:
    """Zero-mean normal trend/scale priors with large variance, IG(2, 1) variances."""
    return LevelPrior(
        beta_mean=np.zeros(n_beta), beta_cov=variance,
        gamma_mean=np.zeros(n_gamma), gamma_cov=variance,
        sigma2_shape=shape, sigma2_rate=rate, tau2_shape=shape, tau2_rate=rate,
        phi_upper=np.broadcast_to(np.asarray(phi_upper, dtype=np.float64), (dim,)).copy(),
    )


def log_normal(x, mean, cov) -> float:
    x = np.atleast_1d(x)
    if x.size == 0:
        return 0.0
    chol = np.linalg.cholesky(cov)
    u = np.linalg.solve(chol, x - mean)
    return float(-0.5 * (x.size * LOG_2PI + u @ u) - np.sum(np.log(np.diag(chol))))


def log_inv_gamma(x: float, shape: float, rate: float) -> float:
    if x <= 0:
        return -np.inf
    return float(shape * np.log(rate) - gammaln(shape) - (shape + 1) * np.log(x) - rate / x)


def log_prior(params: LevelParams, prior: LevelPrior, level: int) -> float:
    out = log_normal(params.beta, prior.beta_mean, prior.beta_cov)
    if level > 1:
        out += log_normal(params.gamma, prior.gamma_mean, prior.gamma_cov)
    out += log_inv_gamma(params.sigma2, prior.sigma2_shape, prior.sigma2_rate)
    out += log_inv_gamma(params.tau2, prior.tau2_shape, prior.tau2_rate)
    if np.any(params.phi <= 0) or np.any(params.phi >= prior.phi_upper):
        return -np.inf
    return float(out - np.sum(np.log(prior.phi_upper)))


@dataclass
class LevelLayout:
    """Everything the sampler needs about one level, in graph order.

    ``own_pos[k]`` is the position of dataset row ``k``; ``pos_of[t']`` the
    positions of the sites of every level ``t' >= level``; ``lower_pos`` the
    position in the level below of each site here.
    """

    level: int
    refset: AugmentedReferenceSet
    graph: NeighborGraph
    coords: np.ndarray
    z: np.ndarray
    own_pos: np.ndarray
    own_mask: np.ndarray
    pos_of: dict[int, np.ndarray]
    H: np.ndarray
    G: np.ndarray
    lower_pos: np.ndarray | None
    basis: BasisSpec

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def n_obs(self) -> int:
        return self.z.shape[0]

    def to_storage(self, vec: np.ndarray) -> np.ndarray:
        """Reorder a graph-ordered vector (or trailing axis) to reference-set row order."""
        return np.asarray(vec)[..., self.graph.inverse_order]


class NNCGPModel:
    """Data, augmented reference sets, neighbor graphs and bases of a T-level model."""

    def __init__(self, datasets: list[FidelityDataset], m: int = 10,
                 bases: list[BasisSpec] | None = None, neighbor_method: str = "kdtree"):
        if m < 1:
            raise ValueError(f"neighbor budget m must be >= 1, got {m}")
        self.datasets = list(datasets)
        self.m = m
        self.T = len(self.datasets)
        self.bases = list(bases) if bases is not None else [BasisSpec() for _ in self.datasets]
        if len(self.bases) != self.T:
            raise ValueError(f"{len(self.bases)} basis specs for {self.T} levels")
        self.refsets = augment_reference_sets(self.datasets)
        self.dim = self.datasets[0].dim
        self.layouts: list[LevelLayout] = []
        for t, (ds, ref, basis) in enumerate(zip(self.datasets, self.refsets, self.bases)):
            graph = build_neighbor_graph(ref.coords, m, method=neighbor_method)
            inv = graph.inverse_order
            coords = ref.coords[graph.order]
            own_pos = inv[ref.index_maps[ds.level]]
            own_mask = np.zeros(ref.n, dtype=bool)
            own_mask[own_pos] = True
            pos_of = {lvl: inv[idx] for lvl, idx in ref.index_maps.items()}
            lower_pos = None
            if t > 0:
                below = self.layouts[t - 1]
                lower_pos = below.graph.inverse_order[below.refset.locate(coords)]
            self.layouts.append(LevelLayout(
                level=ds.level, refset=ref, graph=graph, coords=coords, z=ds.values.copy(),
                own_pos=own_pos, own_mask=own_mask, pos_of=pos_of,
                H=design(basis.trend, coords),
                G=design(basis.scale, coords) if t > 0 else np.zeros((ref.n, 0)),
                lower_pos=lower_pos, basis=basis,
            ))

    def n_beta(self, t: int) -> int:
        return self.layouts[t].H.shape[1]

    def n_gamma(self, t: int) -> int:
        return self.layouts[t].G.shape[1]

    def default_priors(self, phi_upper=None, variance: float = 1e4) -> list[LevelPrior]:
        """Vague conjugate priors; ``phi_upper`` defaults to the per-axis extent of all sites."""
        if phi_upper is None:
            allc = np.vstack([ds.coords for ds in self.datasets])
            span = allc.max(axis=0) - allc.min(axis=0)
            phi_upper = np.where(span > 0, span, 1.0)
        return [default_prior(self.dim, self.n_beta(t), self.n_gamma(t),
                              phi_upper=phi_upper, variance=variance) for t in range(self.T)]

    def initial_params(self, priors: list[LevelPrior]) -> list[LevelParams]:
        """Prior means for beta/gamma/variances (rate/(shape-1)), phi at half its bound."""
        out = []
        for pr in priors:
            s2 = pr.sigma2_rate / (pr.sigma2_shape - 1) if pr.sigma2_shape > 1 else pr.sigma2_rate
            t2 = pr.tau2_rate / (pr.tau2_shape - 1) if pr.tau2_shape > 1 else pr.tau2_rate
            out.append(LevelParams(pr.beta_mean.copy(), pr.gamma_mean.copy(), s2,
                                   pr.phi_upper / 2.0, t2))
        return out

    def validate(self, params: list[LevelParams], priors: list[LevelPrior] | None = None):
        if len(params) != self.T:
            raise ValueError(f"{len(params)} parameter sets for {self.T} levels")
        for t, p in enumerate(params):
            p.validate(t + 1, self.n_beta(t), self.n_gamma(t), self.dim)
        if priors is not None:
            if len(priors) != self.T:
                raise ValueError(f"{len(priors)} priors for {self.T} levels")
            for t, pr in enumerate(priors):
                if pr.beta_mean.shape[0] != self.n_beta(t):
                    raise ValueError(f"level {t + 1}: beta prior size mismatch")
                if t > 0 and pr.gamma_mean.shape[0] != self.n_gamma(t):
                    raise ValueError(f"level {t + 1}: gamma prior size mismatch")
                if pr.phi_upper.shape[0] != self.dim:
                    raise ValueError(f"level {t + 1}: phi_upper needs {self.dim} components")

    def correlation_factors(self, t: int, phi) -> NNGPFactors:
        lay = self.layouts[t]
        return correlation_factors(lay.graph, lay.refset.coords, phi)


@dataclass
class LatentState:
    """Latent ``w~_t`` and composed ``y~_t`` per level, each in graph order."""

    w_tilde: list[np.ndarray]
    y_tilde: list[np.ndarray] = field(default_factory=list)

    def copy(self) -> "LatentState":
        return LatentState([w.copy() for w in self.w_tilde], [y.copy() for y in self.y_tilde])


def compose_levels(w_tilde, params: list[LevelParams], model: NNCGPModel) -> list[np.ndarray]:
    ys = []
    for t, (w, p, lay) in enumerate(zip(w_tilde, params, model.layouts)):
        y = lay.H @ p.beta + w
        if t > 0:
            if lay.lower_pos is None:
                raise ValueError(f"level {t + 1}: missing index map into level {t}")
            y = y + (lay.G @ p.gamma) * ys[t - 1][lay.lower_pos]
        ys.append(y)
    return ys


def compose_y(state: LatentState, params: list[LevelParams], model: NNCGPModel) -> LatentState:
    """Recompute ``y~`` from ``w~``: ``y_t = zeta_{t-1} y_{t-1} + h_t beta_t + w_t``."""
    if len(state.w_tilde) != model.T:
        raise ValueError("latent state does not match the number of levels")
    return LatentState([w.copy() for w in state.w_tilde],
                       compose_levels(state.w_tilde, params, model))


def log_likelihood_terms(ys, params: list[LevelParams], model: NNCGPModel, z=None) -> list[float]:
    """Per-level log N(z_t | y_t(S_t), tau_t^2 I); ``z`` overrides the model's observations."""
    z = z if z is not None else [lay.z for lay in model.layouts]
    out = []
    for y, p, lay, zt in zip(ys, params, model.layouts, z):
        r = zt - y[lay.own_pos]
        out.append(float(-0.5 * (lay.n_obs * (LOG_2PI + np.log(p.tau2)) + r @ r / p.tau2)))
    return out


def log_joint(state: LatentState, params: list[LevelParams], priors: list[LevelPrior],
              model: NNCGPModel, factors: list[NNGPFactors] | None = None, z=None) -> float:
    """Log of the unnormalised joint posterior of parameters and latent fields."""
    ys = compose_levels(state.w_tilde, params, model)
    lik = log_likelihood_terms(ys, params, model, z)
    total = 0.0
    for t, (p, pr, lay) in enumerate(zip(params, priors, model.layouts)):
        fac = factors[t] if factors is not None else model.correlation_factors(t, p.phi).scaled(p.sigma2)
        terms = {
            "prior": log_prior(p, pr, t + 1),
            "latent": nngp_log_density(state.w_tilde[t], fac, lay.graph),
            "likelihood": lik[t],
        }
        for name, val in terms.items():
            if not np.isfinite(val):
                raise FloatingPointError(f"level {t + 1}: non-finite {name} term ({val})")
            total += val
    return float(total)
