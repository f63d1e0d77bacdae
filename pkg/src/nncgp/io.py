"""CSV readers and writers for datasets and predictions."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .geometry import FidelityDataset
from .predict import PredictionResult


def coord_names(dim: int) -> list[str]:
    return ["x", "y"] if dim == 2 else [f"x{j + 1}" for j in range(dim)]


def quantile_name(p: float) -> str:
    return f"q{round(p * 1000):03d}"


def write_dataset(path, ds: FidelityDataset):
    header = coord_names(ds.dim) + ["value"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for row, v in zip(ds.coords.tolist(), ds.values.tolist()):
            out.writerow([repr(c) for c in row] + [repr(v)])


def read_table(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise ValueError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(header)}")
    try:
        data = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    return header, data


def read_dataset(path, level: int) -> FidelityDataset:
    header, data = read_table(path)
    if not header or header[-1] != "value":
        raise ValueError(f"{path}: last column must be 'value', got header {header}")
    dim = len(header) - 1
    if header[:-1] != coord_names(dim):
        raise ValueError(f"{path}: expected coordinate columns {coord_names(dim)}, got {header[:-1]}")
    return FidelityDataset(level, data[:, :dim], data[:, dim])


def write_predictions(path, res: PredictionResult):
    dim = res.targets.shape[1]
    header = coord_names(dim) + ["mean", "sd"] + [quantile_name(p) for p in res.probs]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        table = np.column_stack([res.targets, res.mean, res.sd, res.quantiles])
        for row in table.tolist():
            out.writerow([repr(v) for v in row])


def read_predictions(path) -> dict[str, np.ndarray]:
    header, data = read_table(path)
    return {h: data[:, j] for j, h in enumerate(header)}


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def save_trace(path, trace):
    arrays = {"iterations": trace.iterations, "accepted": trace.accepted, "proposed": trace.proposed}
    for t in range(trace.T):
        for name in ("beta", "gamma", "sigma2", "phi", "tau2"):
            arrays[f"{name}_{t + 1}"] = getattr(trace, name)[t]
        if trace.latent is not None:
            arrays[f"latent_{t + 1}"] = trace.latent[t]
        if trace.mh_step:
            arrays[f"mh_step_{t + 1}"] = trace.mh_step[t]
    np.savez_compressed(path, **arrays)


def load_trace(path, model):
    """Rebuild a :class:`ChainTrace` for ``model`` from :func:`save_trace` output."""
    from .sampler import ChainTrace

    with np.load(path) as npz:
        get = {k: npz[k] for k in npz.files}
    T = model.T
    if f"beta_{T}" not in get or f"beta_{T + 1}" in get:
        raise ValueError(f"{path}: trace does not have {T} levels")
    per = {name: [get[f"{name}_{t + 1}"] for t in range(T)]
           for name in ("beta", "gamma", "sigma2", "phi", "tau2")}
    latent = [get[f"latent_{t + 1}"] for t in range(T)] if "latent_1" in get else None
    steps = [get[f"mh_step_{t + 1}"] for t in range(T)] if "mh_step_1" in get else []
    return ChainTrace(model, get["iterations"], per["beta"], per["gamma"], per["sigma2"],
                      per["phi"], per["tau2"], latent, get["accepted"], get["proposed"], steps)


def write_trace_csv(path, trace, t: int):
    """Per-level parameter trace: ``iter,beta...,gamma...,sigma2,phi...,tau2`` (t is 0-based)."""
    b, g, ph = trace.beta[t], trace.gamma[t], trace.phi[t]
    header = (["iter"] + [f"beta{j + 1}" for j in range(b.shape[1])]
              + [f"gamma{j + 1}" for j in range(g.shape[1])] + ["sigma2"]
              + [f"phi{j + 1}" for j in range(ph.shape[1])] + ["tau2"])
    table = np.column_stack([trace.iterations, b, g, trace.sigma2[t], ph, trace.tau2[t]])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for row, it in zip(table.tolist(), trace.iterations.tolist()):
            out.writerow([str(int(it))] + [repr(v) for v in row[1:]])
