"""Tests for kernels, exact/sparse GP prediction and Gaussian KL."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpssm.gp import Gaussian, SparseGP, gaussian_kl, gp_posterior, sparse_predict
from gpssm.kernels import Kernel, kernel_matrix


def _rbf_scalar(kernel, x, z):
    """Loop-free scalar oracle for a single kernel evaluation."""
    d = (np.asarray(x) - np.asarray(z)) / kernel.lengthscales
    return kernel.signal_var * np.exp(-0.5 * np.dot(d, d))


def test_kernel_single_point_is_signal_variance():
    k = Kernel(2.5, [1.0, 0.5])
    x = np.array([[0.3, -0.7]])
    np.testing.assert_allclose(kernel_matrix(k, x, x), [[2.5]], rtol=1e-12)


def test_kernel_identical_rows_duplicate():
    k = Kernel(1.0, [1.0])
    X = np.array([[0.2], [0.2], [1.0]])
    K = kernel_matrix(k, X)
    np.testing.assert_allclose(K[0], K[1], rtol=1e-12)
    np.testing.assert_allclose(K, K.T, rtol=1e-12)


def test_kernel_matrix_matches_elementwise_oracle():
    rng = np.random.default_rng(0)
    k = Kernel(1.7, rng.uniform(0.5, 2.0, size=2))
    X = rng.normal(size=(4, 2))
    Z = rng.normal(size=(3, 2))
    K = kernel_matrix(k, X, Z)
    for i in range(4):
        for j in range(3):
            np.testing.assert_allclose(K[i, j], _rbf_scalar(k, X[i], Z[j]), rtol=1e-12)


def test_kernel_dimension_mismatch():
    k = Kernel(1.0, [1.0, 1.0])
    with pytest.raises(ValueError):
        kernel_matrix(k, np.zeros((3, 3)))


def test_kernel_matrix_psd():
    rng = np.random.default_rng(5)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        k = Kernel(1.0 + rng.random(), rng.uniform(0.3, 2.0, size=3))
        X = rng.normal(size=(8, 3))
        eig = np.linalg.eigvalsh(kernel_matrix(k, X))
        assert eig.min() > -1e-8


# --- exact GP posterior ------------------------------------------------------

def test_gp_posterior_no_data_is_prior():
    k = Kernel(1.3, [0.8])
    xq = np.array([[0.0], [1.0]])
    post = gp_posterior(k, None, None, None, xq)
    np.testing.assert_allclose(post.mean, np.zeros(2))
    np.testing.assert_allclose(post.cov, kernel_matrix(k, xq), rtol=1e-12)


def test_gp_posterior_interpolates_observations():
    rng = np.random.default_rng(1)
    k = Kernel(1.0, [1.0])
    X = rng.uniform(-2, 2, size=(6, 1))
    f = np.sin(X[:, 0])
    post = gp_posterior(k, None, X, f, X, full_cov=False)
    np.testing.assert_allclose(post.mean, f, atol=1e-4)
    assert np.all(post.cov <= 1e-6)


def _conditional_gaussian_oracle(k, X, f, xq):
    """Independent joint-Gaussian conditioning implementation."""
    n, q = X.shape[0], xq.shape[0]
    joint = np.vstack([X, xq])
    K = np.zeros((n + q, n + q))
    for i in range(n + q):
        for j in range(n + q):
            K[i, j] = _rbf_scalar(k, joint[i], joint[j])
    jit = 1e-6 * np.mean(np.diag(K[:n, :n]))
    Kxx = K[:n, :n] + jit * np.eye(n)
    Kqx = K[n:, :n]
    Kqq = K[n:, n:]
    mean = Kqx @ np.linalg.solve(Kxx, f)
    cov = Kqq - Kqx @ np.linalg.solve(Kxx, Kqx.T)
    return mean, cov


def test_gp_posterior_matches_conditioning_oracle():
    rng = np.random.default_rng(2)
    k = Kernel(1.5, rng.uniform(0.6, 1.4, size=2))
    X = rng.normal(size=(5, 2))
    f = rng.normal(size=5)
    xq = rng.normal(size=(3, 2))
    post = gp_posterior(k, None, X, f, xq)
    mean_o, cov_o = _conditional_gaussian_oracle(k, X, f, xq)
    np.testing.assert_allclose(post.mean, mean_o, atol=1e-8)
    np.testing.assert_allclose(post.cov, cov_o, atol=1e-8)


def test_gp_posterior_variance_never_exceeds_prior():
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        k = Kernel(1.0 + rng.random(), rng.uniform(0.4, 1.5, size=2))
        X = rng.normal(size=(7, 2))
        f = rng.normal(size=7)
        xq = rng.normal(size=(5, 2))
        post = gp_posterior(k, None, X, f, xq, full_cov=False)
        assert np.all(post.cov <= k.signal_var + 1e-10)


# --- sparse GP ---------------------------------------------------------------

def _make_sgp(seed=0, d_in=2, d_out=2, M=6):
    rng = np.random.default_rng(seed)
    return SparseGP.create(d_in, d_out, M, rng), rng


def test_sparse_predict_prior_reproduction():
    # q(u) = p(u) after create(): the sparse posterior collapses to the prior
    sgp, rng = _make_sgp(3)
    xq = rng.normal(size=(5, 2))
    preds = sparse_predict(sgp, xq)
    for dim, g in enumerate(preds):
        np.testing.assert_allclose(g.mean, np.zeros(5), atol=1e-10)
        np.testing.assert_allclose(g.cov, np.exp(sgp.log_sf2[dim, 0, 0]) * np.ones(5),
                                   atol=1e-8)


def test_sparse_predict_near_deterministic_inducing():
    sgp, rng = _make_sgp(4, d_in=1, d_out=1, M=5)
    target = rng.normal(size=(1, 5))
    covs = 1e-10 * np.broadcast_to(np.eye(5), (1, 5, 5))
    sgp = sgp.set_inducing_dist(target, covs)
    preds = sparse_predict(sgp, sgp.z)
    np.testing.assert_allclose(preds[0].mean, target[0], atol=1e-3)
    assert np.all(preds[0].cov <= 1e-5)


def test_sparse_predict_with_exact_posterior_matches_gp():
    # inducing points placed at the n training inputs and q(u) set to the
    # exact (noiseless) posterior there: sparse == exact within 1e-8
    for seed in range(5):
        rng = np.random.default_rng(200 + seed)
        n = int(rng.integers(5, 30))
        X = rng.uniform(-2, 2, size=(n, 2))
        f = np.sin(X[:, 0]) + 0.3 * X[:, 1]
        kern = Kernel(1.2, np.array([0.9, 1.1]))
        sgp = SparseGP(
            z=X,
            log_sf2=np.full((1, 1, 1), np.log(kern.signal_var)),
            log_ls=np.log(kern.lengthscales).reshape(1, 2),
            qu_mean=f.reshape(1, n, 1),
            qu_chol_raw=np.full((1, n, n), 0.0),
            mean_cols=None,
        ).set_inducing_dist(f.reshape(1, n), np.zeros((1, n, n)))
        xq = rng.uniform(-2, 2, size=(7, 2))
        sp = sparse_predict(sgp, xq, full_cov=True)[0]
        ex = gp_posterior(kern, None, X, f, xq)
        np.testing.assert_allclose(sp.mean, ex.mean, atol=1e-8)
        np.testing.assert_allclose(sp.cov, ex.cov, atol=1e-8)


def test_sparse_predict_query_dim_mismatch():
    sgp, _ = _make_sgp(1)
    with pytest.raises(ValueError):
        sparse_predict(sgp, np.zeros((3, 5)))


# --- Gaussian KL -------------------------------------------------------------

def test_kl_zero_for_identical():
    g = Gaussian(np.array([0.5, -1.0]), np.array([0.2, 0.7]))
    assert abs(gaussian_kl(g, g)) < 1e-12


def test_kl_scalar_analytic():
    q = Gaussian(np.array([0.0]), np.array([1.0]))
    p = Gaussian(np.array([1.0]), np.array([1.0]))
    np.testing.assert_allclose(gaussian_kl(q, p), 0.5, rtol=1e-12)


def test_kl_matches_monte_carlo_oracle():
    rng = np.random.default_rng(8)
    A = rng.normal(size=(3, 3))
    Sq = A @ A.T + 0.5 * np.eye(3)
    B = rng.normal(size=(3, 3))
    Sp = B @ B.T + 0.5 * np.eye(3)
    mq = rng.normal(size=3)
    mp = rng.normal(size=3)
    kl = float(gaussian_kl(Gaussian(mq, Sq), Gaussian(mp, Sp)))

    # Monte Carlo estimate of E_q[log q - log p]
    n = 10**6
    Lq = np.linalg.cholesky(Sq)
    xs = mq + rng.standard_normal((n, 3)) @ Lq.T

    def logpdf(x, m, S):
        L = np.linalg.cholesky(S)
        w = np.linalg.solve(L, (x - m).T)
        return (-0.5 * (w**2).sum(axis=0) - np.log(np.diag(L)).sum()
                - 1.5 * np.log(2 * np.pi))

    diffs = logpdf(xs, mq, Sq) - logpdf(xs, mp, Sp)
    mc = diffs.mean()
    se = diffs.std(ddof=1) / np.sqrt(n)
    assert abs(kl - mc) < 3 * se + 1e-6


def test_kl_dimension_mismatch():
    with pytest.raises(ValueError):
        gaussian_kl(Gaussian(np.zeros(2), np.ones(2)), Gaussian(np.zeros(3), np.ones(3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_kl_nonnegative_property(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 5))
    q = Gaussian(rng.normal(size=d), rng.uniform(0.05, 3.0, size=d))
    p = Gaussian(rng.normal(size=d), rng.uniform(0.05, 3.0, size=d))
    kl = float(gaussian_kl(q, p))
    assert kl >= -1e-12
    assert float(gaussian_kl(q, q)) < 1e-12


def test_kl_mixed_diag_full():
    rng = np.random.default_rng(12)
    q = Gaussian(rng.normal(size=2), np.array([0.5, 1.5]))
    A = rng.normal(size=(2, 2))
    p = Gaussian(rng.normal(size=2), A @ A.T + np.eye(2))
    kl_mixed = float(gaussian_kl(q, p))
    kl_full = float(gaussian_kl(Gaussian(q.mean, np.diag(q.cov)), p))
    np.testing.assert_allclose(kl_mixed, kl_full, rtol=1e-8)
