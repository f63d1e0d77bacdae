"""Posterior-predictive sampling at new locations and on regular grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import as_coords, nearest_reference
from .model import design
from .nngp import neighbor_factors
from .sampler import ChainTrace


@dataclass
class PredictionRequest:
    targets: np.ndarray
    level: int
    quantiles: tuple = (0.025, 0.975)

    def __post_init__(self):
        self.targets = as_coords(self.targets)
        if self.targets.shape[0] == 0:
            raise ValueError("no prediction targets")
        self.quantiles = tuple(float(q) for q in self.quantiles)
        if any(not 0 < q < 1 for q in self.quantiles):
            raise ValueError(f"quantile probabilities must lie in (0, 1), got {self.quantiles}")


@dataclass
class PredictionResult:
    targets: np.ndarray
    level: int
    mean: np.ndarray
    sd: np.ndarray
    probs: tuple
    quantiles: np.ndarray  # (n_targets, len(probs))
    n_draws: int
    draws: np.ndarray | None = None

    def quantile(self, p: float) -> np.ndarray:
        return self.quantiles[:, self.probs.index(p)]


def _match_reference(ref_coords: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Row in ``ref_coords`` of each target that coincides with a reference site, else -1."""
    lookup = {tuple(r): i for i, r in enumerate(ref_coords.tolist())}
    return np.array([lookup.get(tuple(r), -1) for r in targets.tolist()], dtype=np.int64)


def _draw_rows(n: int, max_draws: int | None) -> np.ndarray:
    if max_draws is None or max_draws >= n:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, max_draws).round().astype(np.int64))


def predict(trace: ChainTrace, targets, level: int | None = None, quantiles=(0.025, 0.975),
            seed: int = 0, max_draws: int | None = None, keep_draws: bool = False) -> PredictionResult:
    """Sample ``z_level`` at ``targets`` once per retained draw and summarise.

    For every draw and every level up to ``level`` the latent field at a
    target is drawn from its NNGP conditional given the ``m`` nearest sites of
    that level's reference set; targets that are reference sites reuse the
    stored latent value. The levels are then composed through the
    autoregression and the nugget of the requested level is added.
    """
    model = trace.model
    level = model.T if level is None else level
    if not 1 <= level <= model.T:
        raise ValueError(f"level must be in 1..{model.T}, got {level}")
    req = PredictionRequest(targets, level, quantiles)
    if len(trace) == 0:
        raise ValueError("empty trace")
    if trace.latent is None:
        raise ValueError("trace has no latent snapshots; rerun with store_latent=True")
    if req.targets.shape[1] != model.dim:
        raise ValueError(f"targets have d={req.targets.shape[1]}, model has d={model.dim}")

    pts = req.targets
    n_p = pts.shape[0]
    rows = _draw_rows(len(trace), max_draws)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))

    plans = []
    for t in range(level):
        lay = model.layouts[t]
        hit = _match_reference(lay.coords, pts)
        free = np.flatnonzero(hit < 0)
        nbrs = nearest_reference(lay.coords, pts[free], model.m) if free.size else None
        H = design(lay.basis.trend, pts)
        G = design(lay.basis.scale, pts) if t > 0 else None
        plans.append((hit, free, nbrs, H, G))

    out = np.empty((rows.shape[0], n_p))
    cache: list[tuple | None] = [None] * level
    for k, r in enumerate(rows):
        y = np.zeros(n_p)
        for t in range(level):
            hit, free, nbrs, H, G = plans[t]
            w_ref = trace.latent[t][r]
            phi = trace.phi[t][r]
            w = np.empty(n_p)
            known = hit >= 0
            w[known] = w_ref[hit[known]]
            if free.size:
                if cache[t] is None or not np.array_equal(cache[t][0], phi):
                    fac = neighbor_factors(pts[free], model.layouts[t].coords, nbrs, phi)
                    cache[t] = (phi.copy(), fac)
                fac = cache[t][1]
                gathered = w_ref[np.where(nbrs >= 0, nbrs, 0)]
                cond = np.sum(fac.b * gathered, axis=1)
                sd = np.sqrt(np.maximum(fac.f, 0.0) * trace.sigma2[t][r])
                w[free] = cond + sd * rng.standard_normal(free.size)
            y = H @ trace.beta[t][r] + w + ((G @ trace.gamma[t][r]) * y if t > 0 else 0.0)
        tau2 = trace.tau2[level - 1][r]
        out[k] = y + np.sqrt(tau2) * rng.standard_normal(n_p)

    qs = np.quantile(out, req.quantiles, axis=0).T if req.quantiles else np.empty((n_p, 0))
    return PredictionResult(pts, level, out.mean(axis=0), out.std(axis=0), req.quantiles,
                            qs.reshape(n_p, len(req.quantiles)), int(rows.shape[0]),
                            out if keep_draws else None)


def grid_centers(bbox, cell_sizes) -> np.ndarray:
    """Centers of the cells covering ``bbox = (lo, hi)``, row-major with the first axis fastest."""
    lo, hi = (np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in bbox)
    if lo.shape != hi.shape:
        raise ValueError("bbox corners have different dimensions")
    if np.any(hi <= lo):
        raise ValueError(f"bbox has zero area: lo={lo.tolist()}, hi={hi.tolist()}")
    cell = np.broadcast_to(np.asarray(cell_sizes, dtype=np.float64), lo.shape)
    if np.any(cell <= 0):
        raise ValueError("cell sizes must be positive")
    counts = np.ceil((hi - lo) / cell - 1e-9).astype(int)
    axes = [lo[j] + (np.arange(counts[j]) + 0.5) * cell[j] for j in range(lo.shape[0])]
    mesh = np.meshgrid(*axes[::-1], indexing="ij")
    return np.column_stack([g.ravel() for g in mesh[::-1]])


def predict_grid(trace: ChainTrace, bbox, cell_sizes, level: int | None = None, **kwargs) -> PredictionResult:
    return predict(trace, grid_centers(bbox, cell_sizes), level, **kwargs)
