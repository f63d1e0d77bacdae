"""Single-level and pooled NNGP comparators.

Both run the T=1 special case of the same sampler, so kernels, priors,
neighbor search and scoring are shared with the multi-level model.
"""

from __future__ import annotations

import numpy as np

from .geometry import FidelityDataset, domain_diameter, jitter_duplicates
from .model import BasisSpec, LevelPrior
from .sampler import ChainTrace, SamplerConfig, run_chain


def fit_single_level(dataset: FidelityDataset, priors: list[LevelPrior] | None = None,
                     config: SamplerConfig | None = None, *, m: int = 10,
                     basis: BasisSpec | None = None, **kwargs) -> ChainTrace:
    """Fit one level on its own (relabelled as level 1)."""
    ds = FidelityDataset(1, dataset.coords, dataset.values)
    bases = None if basis is None else [basis]
    return run_chain([ds], priors, config, m=m, bases=bases, **kwargs)


def combine_levels(datasets: list[FidelityDataset]) -> FidelityDataset:
    """Pool every level into one dataset; repeated sites are jittered apart."""
    if not datasets:
        raise ValueError("no datasets")
    dims = {ds.dim for ds in datasets}
    if len(dims) != 1:
        raise ValueError(f"inconsistent coordinate dimensions across levels: {sorted(dims)}")
    coords = np.vstack([ds.coords for ds in datasets])
    values = np.concatenate([ds.values for ds in datasets])
    return FidelityDataset(1, jitter_duplicates(coords, domain_diameter(coords)), values)


def fit_combined(datasets: list[FidelityDataset], priors: list[LevelPrior] | None = None,
                 config: SamplerConfig | None = None, *, m: int = 10,
                 basis: BasisSpec | None = None, **kwargs) -> ChainTrace:
    return fit_single_level(combine_levels(datasets), priors, config, m=m, basis=basis, **kwargs)
