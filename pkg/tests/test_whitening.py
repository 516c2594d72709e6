import numpy as np
import pytest

from oracles import gaussian_loglik
from perturbvamp.whitening import SingularCovarianceError, inv_sqrt, whiten


def _spd(rng, M):
    X = rng.standard_normal((M, M))
    return X @ X.T + 0.1 * np.eye(M)


def _instance(rng, M, N):
    S = _spd(rng, M)
    return rng.standard_normal(M), rng.standard_normal((M, N)), S


def test_inv_sqrt_identity():
    np.testing.assert_allclose(inv_sqrt(np.eye(4)), np.eye(4), atol=1e-15)


def test_inv_sqrt_diagonal():
    np.testing.assert_allclose(inv_sqrt(np.diag([4.0, 9.0])), np.diag([0.5, 1 / 3]), rtol=1e-15)


def test_inv_sqrt_defining_identity():
    rng = np.random.default_rng(0)
    S = _spd(rng, 20)
    R = inv_sqrt(S)
    np.testing.assert_array_equal(R, R.T)
    assert np.linalg.norm(R @ S @ R - np.eye(20)) <= 1e-8 * np.sqrt(20)
    comm = np.linalg.norm(R @ S - S @ R)
    assert comm <= 1e-8 * np.linalg.norm(S) * np.linalg.norm(R)


def test_inv_sqrt_rejects_singular():
    with pytest.raises(SingularCovarianceError):
        inv_sqrt(np.diag([1.0, 0.0]))
    with pytest.raises(SingularCovarianceError):
        inv_sqrt(np.diag([1.0, -1e-3]))


@pytest.mark.parametrize("method", ["eigh", "cholesky"])
def test_white_noise_is_identity(method):
    rng = np.random.default_rng(1)
    y, A, _ = _instance(rng, 6, 9)
    A *= np.sqrt(9 / np.sum(A**2))
    wm = whiten(y, A, np.eye(6) / 250.0, method=method)
    assert wm.gamma_w2k == pytest.approx(250.0, rel=1e-12)
    if method == "eigh":
        np.testing.assert_allclose(wm.A2k, A, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(wm.y2k, y, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("method", ["eigh", "cholesky"])
def test_frobenius_normalization(method):
    rng = np.random.default_rng(2)
    for M, N in [(3, 7), (10, 10), (16, 5)]:
        y, A, S = _instance(rng, M, N)
        wm = whiten(y, A, S, method=method)
        assert np.sum(wm.A2k**2) == pytest.approx(N, rel=1e-8)


@pytest.mark.parametrize("method", ["eigh", "cholesky"])
def test_likelihood_ratio_equivalence(method):
    rng = np.random.default_rng(3)
    M, N = 12, 18
    y, A, S = _instance(rng, M, N)
    wm = whiten(y, A, S, method=method)
    white = np.eye(M) / wm.gamma_w2k
    for _ in range(100):
        x1, x2 = rng.standard_normal((2, N))
        lhs = gaussian_loglik(y, A @ x1, S) - gaussian_loglik(y, A @ x2, S)
        rhs = gaussian_loglik(wm.y2k, wm.A2k @ x1, white) - gaussian_loglik(wm.y2k, wm.A2k @ x2, white)
        assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(lhs))


@pytest.mark.parametrize("c", [1e-3, 1e3])
def test_scale_consistency(c):
    rng = np.random.default_rng(4)
    y, A, S = _instance(rng, 8, 11)
    base = whiten(y, A, S)
    scaled = whiten(y, A, c * S)
    assert scaled.gamma_w2k == pytest.approx(base.gamma_w2k / c, rel=1e-10)
    np.testing.assert_allclose(scaled.A2k, base.A2k, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(scaled.y2k, base.y2k, rtol=1e-9, atol=1e-12)


def test_methods_agree_up_to_rotation():
    rng = np.random.default_rng(5)
    y, A, S = _instance(rng, 9, 14)
    a = whiten(y, A, S, "eigh")
    b = whiten(y, A, S, "cholesky")
    assert a.gamma_w2k == pytest.approx(b.gamma_w2k, rel=1e-10)
    np.testing.assert_allclose(a.A2k.T @ a.A2k, b.A2k.T @ b.A2k, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(a.A2k.T @ a.y2k, b.A2k.T @ b.y2k, rtol=1e-8, atol=1e-10)


def test_whiten_shape_and_method_errors():
    rng = np.random.default_rng(6)
    y, A, S = _instance(rng, 4, 5)
    with pytest.raises(ValueError):
        whiten(y[:3], A, S)
    with pytest.raises(ValueError):
        whiten(y, A, S, method="qr")
    with pytest.raises(SingularCovarianceError):
        whiten(y, A, np.zeros((4, 4)), method="cholesky")
