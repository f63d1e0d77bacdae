import numpy as np
import pytest

from nncgp.covariance import KernelParams, cholesky_jittered, cross_cov, kernel


def test_zero_distance_is_variance():
    assert kernel([0.2, 0.4], [0.2, 0.4], KernelParams(4.0, [1.0, 1.0])) == 4.0


def test_direct_formula():
    assert kernel([0, 0], [2, 0], KernelParams(1.0, [1.0, 1.0])) == pytest.approx(np.exp(-1.0), abs=1e-15)


def test_anisotropy():
    p = KernelParams(2.0, [0.5, 2.0])
    assert kernel([0, 0], [1, 1], p) == pytest.approx(2.0 * np.exp(-0.5 * (2.0 + 0.5)))


def test_symmetry(rng):
    p = KernelParams(1.3, rng.uniform(0.1, 1, 3))
    for _ in range(20):
        a, b = rng.uniform(size=(2, 3))
        assert kernel(a, b, p) == kernel(b, a, p)


def test_invalid_params():
    with pytest.raises(ValueError):
        KernelParams(0.0, [1.0])
    with pytest.raises(ValueError):
        KernelParams(1.0, [1.0, -1.0])


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        kernel([0, 0], [0, 0], KernelParams(1.0, [1.0, 1.0, 1.0]))


def test_cross_cov_single_point():
    p = KernelParams(2.5, [0.3, 0.3])
    assert cross_cov([[0.1, 0.2]], [[0.1, 0.2]], p).tolist() == [[2.5]]


def test_cross_cov_matches_kernel_and_factorizes(rng):
    p = KernelParams(1.7, [0.2, 0.6])
    pts = rng.uniform(size=(10, 2))
    c = cross_cov(pts, pts, p)
    for i in range(10):
        for j in range(10):
            assert c[i, j] == pytest.approx(kernel(pts[i], pts[j], p), rel=1e-14)
    chol = cholesky_jittered(c, p.sigma2)
    assert np.allclose(chol @ chol.T, c)


def test_cholesky_jitter_rescues_semidefinite():
    c = np.ones((3, 3))
    chol = cholesky_jittered(c)
    assert np.allclose(chol @ chol.T, c, atol=1e-8)
    with pytest.raises(np.linalg.LinAlgError):
        cholesky_jittered(-np.eye(2))
