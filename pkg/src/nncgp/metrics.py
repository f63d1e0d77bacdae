"""Prediction scores and the deviance information criterion."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .model import compose_levels, log_likelihood_terms
from .sampler import ChainTrace


def _pair(pred, obs):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    obs = np.asarray(obs, dtype=np.float64).reshape(-1)
    if pred.shape != obs.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} predictions, {obs.shape[0]} observations")
    if pred.shape[0] == 0:
        raise ValueError("need at least one observation")
    return pred, obs


def rmspe(pred, obs) -> float:
    pred, obs = _pair(pred, obs)
    return float(np.sqrt(np.mean((pred - obs) ** 2)))


def nsme(pred, obs) -> float:
    """Nash-Sutcliffe efficiency 1 - SSE/SST."""
    pred, obs = _pair(pred, obs)
    sst = float(np.sum((obs - obs.mean()) ** 2))
    if sst == 0:
        raise ValueError("observations are constant; NSME is undefined")
    return 1.0 - float(np.sum((pred - obs) ** 2)) / sst


def interval_metrics(lo, hi, obs) -> tuple[float, float]:
    """Empirical coverage and average length of the intervals ``[lo, hi]``."""
    lo = np.asarray(lo, dtype=np.float64).reshape(-1)
    hi = np.asarray(hi, dtype=np.float64).reshape(-1)
    obs = np.asarray(obs, dtype=np.float64).reshape(-1)
    if not lo.shape == hi.shape == obs.shape:
        raise ValueError("interval bounds and observations differ in length")
    if lo.shape[0] == 0:
        raise ValueError("need at least one observation")
    bad = np.flatnonzero(lo > hi)
    if bad.size:
        raise ValueError(f"lower bound exceeds upper bound at index {int(bad[0])}")
    inside = (obs >= lo) & (obs <= hi)
    return float(inside.mean()), float(np.mean(hi - lo))


def deviance(trace: ChainTrace, r: int) -> float:
    """-2 log p(z | parameters, latent fields) at retained draw ``r``."""
    params = trace.params_at(r)
    w = [trace.latent[t][r] for t in range(trace.T)]
    ys = compose_levels(w, params, trace.model)
    return -2.0 * float(np.sum(log_likelihood_terms(ys, params, trace.model)))


def dic(trace: ChainTrace) -> tuple[float, float]:
    """Effective number of parameters and DIC, conditioning on the latent draws.

    ``pd = mean(D) - D(posterior means of parameters and latent fields)`` and
    ``dic = pd + mean(D)``.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    if trace.latent is None:
        raise ValueError("DIC needs latent snapshots; rerun with store_latent=True")
    d = np.array([deviance(trace, r) for r in range(len(trace))])
    params = trace.mean_params()
    w = [lat.mean(axis=0) for lat in trace.latent]
    ys = compose_levels(w, params, trace.model)
    d_bar = -2.0 * float(np.sum(log_likelihood_terms(ys, params, trace.model)))
    pd = float(d.mean()) - d_bar
    return pd, pd + float(d.mean())


@dataclass
class EvalReport:
    rmspe: float
    nsme: float
    cvg95: float
    alci95: float
    n_test: int
    pd: float | None = None
    dic: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def evaluate(mean, lo, hi, obs, trace: ChainTrace | None = None) -> EvalReport:
    cvg, alci = interval_metrics(lo, hi, obs)
    report = EvalReport(rmspe(mean, obs), nsme(mean, obs), cvg, alci, int(np.size(obs)))
    if trace is not None:
        report.pd, report.dic = dic(trace)
    return report
