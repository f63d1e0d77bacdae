"""Forward simulation of multi-fidelity data from the autoregressive model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .covariance import KernelParams, cholesky_jittered, cross_cov
from .geometry import FidelityDataset, build_neighbor_graph
from .model import BasisSpec, LevelParams, design
from .nngp import compute_factors, sample_nngp

DENSE_SIM_CAP = 2000


@dataclass
class SynthConfig:
    n: list[int]
    params: list[LevelParams]
    bbox: tuple = ((0.0, 0.0), (1.0, 1.0))
    holdouts: list = field(default_factory=list)
    holdout_level: int | None = None
    shared_fraction: float = 0.0
    bases: list[BasisSpec] | None = None
    seed: int = 0
    dense_cap: int = DENSE_SIM_CAP
    approx_m: int = 10

    def __post_init__(self):
        self.n = [int(v) for v in self.n]
        if len(self.n) != len(self.params):
            raise ValueError(f"{len(self.n)} sample sizes for {len(self.params)} parameter sets")
        if any(v < 1 for v in self.n):
            raise ValueError("every level needs n_t >= 1")
        lo, hi = (np.asarray(v, dtype=np.float64) for v in self.bbox)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError(f"malformed bbox {self.bbox}")
        self.bbox = (lo, hi)
        boxes = []
        for box in self.holdouts:
            blo, bhi = (np.asarray(v, dtype=np.float64) for v in box)
            if blo.shape != lo.shape or np.any(bhi <= blo) or np.any(blo < lo) or np.any(bhi > hi):
                raise ValueError(f"holdout box {box} is malformed or outside the domain")
            boxes.append((blo, bhi))
        self.holdouts = boxes
        if self.holdout_level is None:
            self.holdout_level = self.T
        if not 1 <= self.holdout_level <= self.T:
            raise ValueError(f"holdout level must be in 1..{self.T}")
        if not 0 <= self.shared_fraction <= 1:
            raise ValueError("shared_fraction must be in [0, 1]")
        if self.bases is None:
            self.bases = [BasisSpec() for _ in range(self.T)]

    @property
    def T(self) -> int:
        return len(self.n)

    @property
    def dim(self) -> int:
        return self.bbox[0].shape[0]


def table1_params() -> list[LevelParams]:
    """Two-level truth: beta=(10, 1), sigma2=(4, 1), phi=0.1 on both axes, gamma=1, tau2=(0.1, 0.05)."""
    phi = np.array([0.1, 0.1])
    return [LevelParams([10.0], [], 4.0, phi, 0.1),
            LevelParams([1.0], [1.0], 1.0, phi, 0.05)]


DEFAULT_HOLDOUTS = [((0.15, 0.15), (0.35, 0.35)), ((0.6, 0.55), (0.8, 0.75))]


def table1_config(n: int = 500, seed: int = 0, holdouts=None, **kwargs) -> SynthConfig:
    return SynthConfig(n=[n, n], params=table1_params(),
                       holdouts=DEFAULT_HOLDOUTS if holdouts is None else holdouts,
                       seed=seed, **kwargs)


@dataclass
class SynthResult:
    train: list[FidelityDataset]
    test: FidelityDataset | None
    metadata: dict
    latent: list[np.ndarray]  # y_t at the union of sites
    sites: np.ndarray


def _draw_sites(cfg: SynthConfig, rng) -> list[np.ndarray]:
    lo, hi = cfg.bbox
    taken: set[tuple] = set()
    levels = []
    for t, n in enumerate(cfg.n):
        shared = np.empty((0, cfg.dim))
        if t > 0 and cfg.shared_fraction > 0:
            k = min(int(round(cfg.shared_fraction * n)), levels[-1].shape[0])
            shared = levels[-1][rng.choice(levels[-1].shape[0], size=k, replace=False)]
        fresh = []
        while len(fresh) < n - shared.shape[0]:
            p = lo + (hi - lo) * rng.uniform(size=cfg.dim)
            key = tuple(p.tolist())
            if key not in taken:
                taken.add(key)
                fresh.append(p)
        pts = np.vstack([shared, np.asarray(fresh).reshape(-1, cfg.dim)])
        levels.append(pts)
    return levels


def _draw_field(sites, p: LevelParams, dense_cap: int, approx_m: int, rng) -> tuple[np.ndarray, bool]:
    n = sites.shape[0]
    if p.sigma2 == 0:
        return np.zeros(n), True
    kp = KernelParams(p.sigma2, p.phi)
    if n <= dense_cap:
        chol = cholesky_jittered(cross_cov(sites, sites, kp), p.sigma2)
        return chol @ rng.standard_normal(n), True
    graph = build_neighbor_graph(sites, 2 * approx_m)
    w = np.empty(n)
    w[graph.order] = sample_nngp(compute_factors(graph, sites, kp), graph, rng)
    return w, False


def forward(level_sites, params: list[LevelParams], rng, bases: list[BasisSpec] | None = None,
            dense_cap: int = DENSE_SIM_CAP, approx_m: int = 10):
    """Draw ``z_t`` at given sites by running the autoregression on the union of all sites.

    Returns ``(z, ys, sites, exact)``: per-level observations, ``y_t`` on the
    union ``sites`` and whether every field was drawn exactly.
    """
    bases = list(bases) if bases is not None else [BasisSpec() for _ in params]
    level_sites = [np.asarray(v, dtype=np.float64) for v in level_sites]
    sites, inverse = np.unique(np.vstack(level_sites), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    offsets = np.concatenate([[0], np.cumsum([v.shape[0] for v in level_sites])])
    exact = True
    ys = []
    for t, p in enumerate(params):
        w, dense = _draw_field(sites, p, dense_cap, approx_m, rng)
        exact &= dense
        y = design(bases[t].trend, sites) @ np.atleast_1d(p.beta) + w
        if t > 0:
            y = y + (design(bases[t].scale, sites) @ np.atleast_1d(p.gamma)) * ys[-1]
        ys.append(y)
    z = []
    for t, p in enumerate(params):
        idx = inverse[offsets[t]:offsets[t + 1]]
        z.append(ys[t][idx] + np.sqrt(p.tau2) * rng.standard_normal(idx.shape[0]))
    return z, ys, sites, exact


def simulate(cfg: SynthConfig) -> SynthResult:
    """Draw sites, latent fields and noisy observations; split off the holdout boxes."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    level_sites = _draw_sites(cfg, rng)
    zs, ys, sites, exact = forward(level_sites, cfg.params, rng, cfg.bases, cfg.dense_cap, cfg.approx_m)

    train, test = [], None
    for t in range(cfg.T):
        pts, z = level_sites[t], zs[t]
        held = np.zeros(pts.shape[0], dtype=bool)
        if t + 1 == cfg.holdout_level:
            for blo, bhi in cfg.holdouts:
                held |= np.all((pts >= blo) & (pts <= bhi), axis=1)
        if held.all():
            raise ValueError(f"holdout boxes cover every site of level {t + 1}")
        if held.any():
            test = FidelityDataset(t + 1, pts[held], z[held])
        train.append(FidelityDataset(t + 1, pts[~held], z[~held]))

    meta = {
        "seed": cfg.seed,
        "T": cfg.T,
        "n": cfg.n,
        "bbox": [cfg.bbox[0].tolist(), cfg.bbox[1].tolist()],
        "holdouts": [[b[0].tolist(), b[1].tolist()] for b in cfg.holdouts],
        "holdout_level": cfg.holdout_level,
        "shared_fraction": cfg.shared_fraction,
        "field_generation": "exact" if exact else "approximate",
        "n_test": 0 if test is None else test.n,
        "params": [
            {"beta": np.atleast_1d(p.beta).tolist(), "gamma": np.atleast_1d(p.gamma).tolist(),
             "sigma2": float(p.sigma2), "phi": np.atleast_1d(p.phi).tolist(), "tau2": float(p.tau2)}
            for p in cfg.params
        ],
        "bases": [{"trend": b.trend, "scale": b.scale} for b in cfg.bases],
    }
    return SynthResult(train, test, meta, ys, sites)
