import numpy as np
import pytest
from scipy import stats

from nncgp.covariance import KernelParams, cross_cov
from nncgp.model import LevelParams
from nncgp.oracle import (
    dense_conditional,
    dense_log_likelihood,
    dense_marginal_cov,
    gp_joint,
    run_oracle_checks,
)

PHI = np.array([0.3, 0.2])


def _two_levels(gamma=0.8):
    return [LevelParams([2.0], [], 1.5, PHI, 0.1), LevelParams([0.5], [gamma], 0.7, PHI * 2, 0.2)]


def test_single_level_block(rng):
    pts = rng.uniform(size=(8, 2))
    p = [LevelParams([3.0], [], 1.2, PHI, 0.3)]
    j = dense_marginal_cov([(1, pts)], p)
    assert np.allclose(j.lam, cross_cov(pts, pts, KernelParams(1.2, PHI)) + 0.3 * np.eye(8))
    assert np.allclose(j.mu, 3.0)


def test_two_level_expansion(rng):
    pts = rng.uniform(size=(7, 2))
    p = _two_levels()
    j = dense_marginal_cov([(1, pts), (2, pts)], p)
    c1 = cross_cov(pts, pts, KernelParams(1.5, PHI))
    c2 = cross_cov(pts, pts, KernelParams(0.7, PHI * 2))
    assert np.allclose(j.lam[7:, 7:], 0.64 * c1 + c2 + 0.2 * np.eye(7))
    assert np.allclose(j.lam[:7, 7:], 0.8 * c1)
    assert np.allclose(j.mu[7:], 0.5 + 0.8 * 2.0)


def test_severed_autoregression(rng):
    pts = rng.uniform(size=(6, 2))
    j = dense_marginal_cov([(1, pts), (2, pts)], _two_levels(gamma=0.0))
    c2 = cross_cov(pts, pts, KernelParams(0.7, PHI * 2))
    assert np.allclose(j.lam[6:, 6:], c2 + 0.2 * np.eye(6))
    assert np.allclose(j.lam[:6, 6:], 0.0)


def test_symmetric_positive_definite(rng):
    j = dense_marginal_cov([(1, rng.uniform(size=(12, 2))), (2, rng.uniform(size=(9, 2)))], _two_levels())
    assert np.allclose(j.lam, j.lam.T)
    assert np.linalg.eigvalsh(j.lam).min() > 0


def test_size_cap(rng):
    with pytest.raises(ValueError, match="limited"):
        dense_marginal_cov([(1, rng.uniform(size=(30, 2)))], _two_levels()[:1], cap=20)


def test_covariance_matches_forward_simulation(rng):
    # forward recursion y2 = gamma y1 + beta2 + w2 with independent fields
    s1 = rng.uniform(size=(15, 2))
    s2 = rng.uniform(size=(15, 2))
    pts = np.vstack([s1, s2])
    p = _two_levels()
    j = dense_marginal_cov([(1, s1), (2, s2)], p)
    n_sim = 500000
    sim = np.random.default_rng(99)
    l1 = np.linalg.cholesky(cross_cov(pts, pts, KernelParams(1.5, PHI)))
    l2 = np.linalg.cholesky(cross_cov(pts, pts, KernelParams(0.7, PHI * 2)) + 1e-12 * np.eye(30))
    y1 = 2.0 + sim.standard_normal((n_sim, 30)) @ l1.T
    y2 = 0.5 + 0.8 * y1 + sim.standard_normal((n_sim, 30)) @ l2.T
    z = np.hstack([y1[:, :15] + np.sqrt(0.1) * sim.standard_normal((n_sim, 15)),
                   y2[:, 15:] + np.sqrt(0.2) * sim.standard_normal((n_sim, 15))])
    emp = np.cov(z.T)
    d = np.diag(j.lam)
    se = np.sqrt((j.lam**2 + np.outer(d, d)) / n_sim)
    # 465 distinct entries: a 3-sigma band leaves about one expected exceedance
    assert np.mean(np.abs(emp - j.lam) < 3 * se) > 0.99
    assert np.allclose(z.mean(0), j.mu, atol=5 * np.sqrt(d / n_sim).max())


def test_log_likelihood_at_mean(rng):
    j = dense_marginal_cov([(1, rng.uniform(size=(5, 2)))], _two_levels()[:1])
    sign, logdet = np.linalg.slogdet(2 * np.pi * j.lam)
    assert dense_log_likelihood(j.mu, j) == pytest.approx(-0.5 * logdet, rel=1e-12)


def test_log_likelihood_scalar():
    j = gp_joint([[0.0, 0.0]], KernelParams(2.0, [1.0, 1.0]))
    assert dense_log_likelihood([0.7], j) == pytest.approx(stats.norm.logpdf(0.7, 0, np.sqrt(2.0)))


def test_log_likelihood_explicit_inverse(rng):
    j = dense_marginal_cov([(1, rng.uniform(size=(20, 2)))], _two_levels()[:1])
    z = j.mu + rng.standard_normal(20)
    r = z - j.mu
    expect = -0.5 * (20 * np.log(2 * np.pi) + np.log(np.linalg.det(j.lam)) + r @ np.linalg.inv(j.lam) @ r)
    assert dense_log_likelihood(z, j) == pytest.approx(expect, rel=1e-10)


def test_log_likelihood_permutation_invariant(rng):
    pts = rng.uniform(size=(9, 2))
    p = _two_levels()[:1]
    z = rng.standard_normal(9)
    perm = rng.permutation(9)
    a = dense_log_likelihood(z, dense_marginal_cov([(1, pts)], p))
    b = dense_log_likelihood(z[perm], dense_marginal_cov([(1, pts[perm])], p))
    assert a == pytest.approx(b, rel=1e-12)


def test_conditional_on_nothing_is_marginal(rng):
    j = dense_marginal_cov([(1, rng.uniform(size=(4, 2)))], _two_levels()[:1])
    mean, cov = dense_conditional([], j, [0, 1, 2, 3], observed_indices=[])
    assert np.allclose(mean, j.mu) and np.allclose(cov, j.lam)


def test_bivariate_conditional(rng):
    j = dense_marginal_cov([(1, rng.uniform(size=(2, 2)))], _two_levels()[:1])
    mean, cov = dense_conditional([1.3], j, [0])
    s = j.lam
    assert mean[0] == pytest.approx(j.mu[0] + s[0, 1] / s[1, 1] * (1.3 - j.mu[1]))
    assert cov[0, 0] == pytest.approx(s[0, 0] - s[0, 1] ** 2 / s[1, 1])


def test_conditional_rejects_overlap(rng):
    j = dense_marginal_cov([(1, rng.uniform(size=(3, 2)))], _two_levels()[:1])
    with pytest.raises(ValueError):
        dense_conditional([0.0, 0.0], j, [0, 1], observed_indices=[1, 2])


@pytest.mark.parametrize("n", [1, 2, 30])
def test_oracle_checks_pass(n):
    assert all(ok for _, ok, _ in run_oracle_checks(n=n))


def test_oracle_checks_detect_corruption():
    checks = dict((name, ok) for name, ok, _ in run_oracle_checks(n=20, corrupt=True))
    assert not checks["nngp_log_density"]
    assert not checks["precision_inverse"]
    assert not checks["latent_conditional_mean"]
