"""Nearest-neighbor co-kriging Gaussian processes for multi-fidelity spatial data."""

from .covariance import KernelParams, cross_cov, kernel
from .geometry import (
    FidelityDataset,
    NeighborGraph,
    augment_reference_sets,
    build_neighbor_graph,
    jitter_duplicates,
    order_locations,
)
from .model import BasisSpec, LevelParams, LevelPrior, NNCGPModel, default_prior
from .nngp import NNGPFactors, compute_factors, nngp_log_density, sparse_precision_nnz
from .sampler import ChainTrace, GibbsSampler, SamplerConfig, run_chain
from .predict import PredictionResult, predict, predict_grid
from .metrics import EvalReport, dic, interval_metrics, nsme, rmspe
from .baselines import fit_combined, fit_single_level
from .synth import SynthConfig, simulate, table1_config

__version__ = "0.1.0"

__all__ = [
    "BasisSpec", "ChainTrace", "EvalReport", "FidelityDataset", "GibbsSampler", "KernelParams",
    "LevelParams", "LevelPrior", "NNCGPModel", "NNGPFactors", "NeighborGraph", "PredictionResult",
    "SamplerConfig", "SynthConfig", "augment_reference_sets", "build_neighbor_graph",
    "compute_factors", "cross_cov", "default_prior", "dic", "fit_combined", "fit_single_level",
    "interval_metrics", "jitter_duplicates", "kernel", "nngp_log_density", "nsme",
    "order_locations", "predict", "predict_grid", "rmspe", "run_chain", "simulate",
    "sparse_precision_nnz", "table1_config",
]
