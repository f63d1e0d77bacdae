import numpy as np
import pytest

from nncgp.geometry import FidelityDataset
from nncgp.model import LevelParams
from nncgp.predict import grid_centers, predict, predict_grid
from nncgp.sampler import ChainTrace, SamplerConfig, run_chain

PHI = np.array([0.2, 0.2])
FIXED = ("beta", "gamma", "sigma2", "tau2", "phi")


def _data(rng, n=15):
    return [FidelityDataset(1, rng.uniform(size=(n, 2)), 5 + rng.standard_normal(n)),
            FidelityDataset(2, rng.uniform(size=(n, 2)), 6 + rng.standard_normal(n))]


def _params(gamma=0.9, tau2=(0.1, 0.05)):
    return [LevelParams([5.0], [], 2.0, PHI, tau2[0]), LevelParams([1.0], [gamma], 0.5, PHI, tau2[1])]


def _trace(rng, params, n_iter=40, **kw):
    return run_chain(_data(rng), config=SamplerConfig(n_iter=n_iter, burn_in=0, seed=1), m=5,
                     init=params, fixed=FIXED, **kw)


def _repeat(trace, k):
    """Trace holding the last retained state ``k`` times."""
    last = slice(len(trace) - 1, len(trace))
    rep = lambda arrs: [np.repeat(a[last], k, axis=0) for a in arrs]
    return ChainTrace(trace.model, np.arange(k), rep(trace.beta), rep(trace.gamma), rep(trace.sigma2),
                      rep(trace.phi), rep(trace.tau2), rep(trace.latent), trace.accepted, trace.proposed)


def test_grid_single_cell():
    assert grid_centers(((0, 0), (1, 1)), 1.0).tolist() == [[0.5, 0.5]]


def test_grid_quarter_points():
    assert grid_centers(((0, 0), (2, 2)), 1.0).tolist() == [[0.5, 0.5], [1.5, 0.5], [0.5, 1.5], [1.5, 1.5]]


def test_grid_zero_area():
    with pytest.raises(ValueError, match="zero area"):
        grid_centers(((0, 0), (1, 0)), 0.1)
    with pytest.raises(ValueError):
        grid_centers(((0, 0), (1, 1)), 0.0)


def test_grid_equals_enumeration(rng):
    tr = _trace(rng, _params())
    g = predict_grid(tr, ((0, 0), (1, 1)), 0.1, seed=4)
    xs = (np.arange(10) + 0.5) / 10
    explicit = np.array([[x, y] for y in xs for x in xs])
    p = predict(tr, explicit, seed=4)
    assert g.targets.shape == (100, 2)
    assert np.allclose(g.targets, explicit)
    assert np.allclose(g.mean, p.mean, rtol=1e-12) and np.allclose(g.sd, p.sd, rtol=1e-12)


def test_empty_trace_rejected(rng):
    tr = _trace(rng, _params())
    empty = ChainTrace(tr.model, tr.iterations[:0], [b[:0] for b in tr.beta], [g[:0] for g in tr.gamma],
                       [s[:0] for s in tr.sigma2], [p[:0] for p in tr.phi], [t[:0] for t in tr.tau2],
                       [w[:0] for w in tr.latent], tr.accepted, tr.proposed)
    with pytest.raises(ValueError, match="empty"):
        predict(empty, [[0.5, 0.5]])


def test_request_validation(rng):
    tr = _trace(rng, _params())
    with pytest.raises(ValueError):
        predict(tr, [[0.5, 0.5]], level=3)
    with pytest.raises(ValueError):
        predict(tr, [[0.5, 0.5]], quantiles=(0.0, 0.5))


def test_reference_site_with_vanishing_nugget(rng):
    tr = _trace(rng, _params(tau2=(0.1, 1e-12)))
    lay = tr.model.layouts[1]
    site = lay.coords[lay.own_pos[:3]]
    p = predict(tr, site, level=2)
    y = [tr.beta[1][r] + tr.latent[1][r] + tr.gamma[1][r] * (tr.beta[0][r] + tr.latent[0][r][lay.lower_pos])
         for r in range(len(tr))]
    expect = np.mean([v[lay.own_pos[:3]] for v in y], axis=0)
    assert np.allclose(p.mean, expect, atol=1e-5)


def test_severed_autoregression_ignores_level_one(rng):
    tr = _trace(rng, _params(gamma=0.0))
    targets = rng.uniform(size=(6, 2))
    a = predict(tr, targets, seed=2)
    tr.latent[0] = tr.latent[0] + 100.0
    tr.beta[0] = tr.beta[0] - 3.0
    b = predict(tr, targets, seed=2)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.sd, b.sd)


def test_far_target_marginal_sd(rng):
    tr = _repeat(_trace(rng, _params(), n_iter=2), 20000)
    p = predict(tr, [[40.0, 40.0]], seed=5)
    sd = np.sqrt(0.81 * 2.0 + 0.5 + 0.05)
    assert p.sd[0] == pytest.approx(sd, rel=0.05)
    assert p.mean[0] == pytest.approx(1.0 + 0.9 * 5.0, abs=4 * sd / np.sqrt(20000))


def test_quantiles_monotone(rng):
    tr = _trace(rng, _params())
    p = predict(tr, rng.uniform(size=(5, 2)), quantiles=(0.025, 0.25, 0.5, 0.975))
    assert np.all(np.diff(p.quantiles, axis=1) >= 0)
    assert np.all(p.sd >= 0)
    assert np.all((p.mean >= p.quantile(0.025)) & (p.mean <= p.quantile(0.975)))


def test_level_one_prediction(rng):
    tr = _trace(rng, _params())
    p = predict(tr, [[0.3, 0.3]], level=1, keep_draws=True)
    assert p.level == 1 and p.draws.shape == (40, 1)


def test_more_neighbors_approach_dense(rng):
    from nncgp.model import NNCGPModel
    from nncgp.oracle import dense_conditional, dense_marginal_cov

    data = _data(rng, n=20)
    targets = rng.uniform(size=(5, 2))
    params = _params()
    joint = dense_marginal_cov(data + [(2, targets)], params)
    z = np.concatenate([d.values for d in data])
    exact, _ = dense_conditional(z, joint, np.arange(40, 45))
    errs = []
    for m in (5, 39):
        model = NNCGPModel(data, m=m)
        tr = run_chain(model, config=SamplerConfig(n_iter=3000, burn_in=300, seed=0),
                       init=params, fixed=FIXED)
        errs.append(np.sqrt(np.mean((predict(tr, targets, seed=0).mean - exact) ** 2)))
    assert errs[1] <= errs[0] + 0.02
