"""Checking the sampler: dense oracle equivalence and a short Geweke comparison.

The first part runs the same equivalence suite as ``nncgp oracle-check``,
once honestly and once with a corrupted NNGP factor.

The second part is a reduced Geweke test on a T=2 toy model. Parameters and
data are drawn from the prior ("forward"), and a chain alternates one sampler
sweep with regenerating the data ("successive conditional"). A correct kernel
leaves the prior invariant, so the two sets of probes should agree. The
comparison is repeated for the level-local conditionals, which drop the
neighbor and higher-level terms and are not a valid kernel for the joint.

Run with ``python3 demos/sampler_checks.py``; the Geweke part takes about a
minute per variant.
"""

import numpy as np
from scipy import stats

from nncgp.geometry import FidelityDataset
from nncgp.model import LevelParams, LevelPrior, NNCGPModel, compose_levels
from nncgp.nngp import sample_nngp
from nncgp.oracle import run_oracle_checks
from nncgp.sampler import GibbsSampler, SamplerConfig

for corrupt in (False, True):
    print("corrupted factors" if corrupt else "exact factors")
    for name, ok, detail in run_oracle_checks(n=30, corrupt=corrupt):
        print(f"  {name:<26}{'ok' if ok else 'FAIL':<6}{detail}")

PRIORS = [LevelPrior([0.0], 1.0, 6.0, 5.0, 6.0, 1.0, [0.5, 0.5]),
          LevelPrior([0.0], 1.0, 6.0, 5.0, 6.0, 1.0, [0.5, 0.5], [1.0], 0.25)]

rng = np.random.default_rng(11)
model = NNCGPModel([FidelityDataset(1, rng.uniform(size=(12, 2)), np.zeros(12)),
                    FidelityDataset(2, rng.uniform(size=(12, 2)), np.zeros(12))], m=4)


def prior_draw():
    params, w = [], []
    for t, pr in enumerate(PRIORS):
        phi = rng.uniform(0, pr.phi_upper)
        sigma2 = pr.sigma2_rate / rng.standard_gamma(pr.sigma2_shape)
        params.append(LevelParams(rng.multivariate_normal(pr.beta_mean, pr.beta_cov),
                                  rng.multivariate_normal(pr.gamma_mean, pr.gamma_cov) if t else [],
                                  sigma2, phi, pr.tau2_rate / rng.standard_gamma(pr.tau2_shape)))
        w.append(sample_nngp(model.correlation_factors(t, phi).scaled(sigma2), model.layouts[t].graph, rng))
    return params, w


def observe(sampler, params, w):
    ys = compose_levels(w, params, model)
    for t, lay in enumerate(model.layouts):
        sampler.set_observations(t, ys[t][lay.own_pos] + np.sqrt(params[t].tau2) * rng.standard_normal(lay.n_obs))


def probes(params, w):
    return params[0].sigma2, params[0].tau2, float(np.mean(w[0])), float(params[1].gamma[0])


n_samples, thin = 2000, 10
forward = np.array([probes(*prior_draw()) for _ in range(n_samples)])
for mode in ("full", "local"):
    params, w = prior_draw()
    cfg = SamplerConfig(n_iter=1, burn_in=0, seed=12, adapt=False, mh_step=0.5, conditionals=mode)
    sampler = GibbsSampler(model, PRIORS, cfg, init=params, latent=w)
    observe(sampler, params, w)
    chain = np.empty((n_samples, 4))
    for i in range(n_samples):
        for _ in range(thin):
            sampler.step()
            observe(sampler, sampler.params, sampler.w)
        chain[i] = probes(sampler.params, sampler.w)
    pvals = [stats.ks_2samp(forward[:, j], chain[:, j]).pvalue for j in range(4)]
    print(f"\n{mode} conditionals, KS p-values:")
    for name, p, f, c in zip(("sigma2_1", "tau2_1", "mean(w_1)", "gamma"), pvals, forward.T, chain.T):
        print(f"  {name:<10} p={p:.3g}   forward mean {f.mean():7.3f}   chain mean {c.mean():7.3f}")
