"""Exact and sparse inducing-point Gaussian process prediction.

The sparse model keeps one independent GP per output dimension, all sharing
the same inducing inputs ``z``. Per-dimension hyperparameters and the
variational inducing distributions are stored stacked along a leading axis
so that prediction for every output dimension runs as one batched matrix
computation. Kernel matrices are factorized with a mandatory relative
jitter of 1e-6 so that exact-GP and sparse paths regularize identically.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import (
    Var,
    chol_jittered,
    clip_min,
    diag_embed,
    diag_part,
    exp,
    expand_batch,
    log,
    mT,
    square,
    tri_solve,
)
from .kernels import Kernel, kernel_matrix, rbf_from_scaled

KERNEL_JITTER = 1e-6
VAR_FLOOR = 1e-12


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


@dataclass
class Gaussian:
    """Multivariate normal with full or diagonal covariance.

    ``cov`` with one dimension fewer than a square matrix (matching the
    mean) holds per-component variances.
    """

    mean: object
    cov: object

    @property
    def is_diag(self) -> bool:
        return np.ndim(self.cov) == np.ndim(self.mean)

    @property
    def dim(self) -> int:
        return int(np.shape(self.mean)[-1])

    def full_cov(self):
        return diag_embed(self.cov) if self.is_diag else self.cov

    def var_diag(self):
        return self.cov if self.is_diag else diag_part(self.cov)


def _resolve_mean_fn(mean_fn, X):
    """Evaluate a mean function spec at inputs: None=zero, scalar, or callable."""
    n = np.shape(X)[0]
    if mean_fn is None:
        return np.zeros(n)
    if callable(mean_fn):
        return mean_fn(X)
    return float(mean_fn) * np.ones(n)


def gp_posterior(kernel: Kernel, mean_fn, X, fX, x_query, noise_var: float = 0.0,
                 full_cov: bool = True) -> Gaussian:
    """Exact GP predictive distribution at query points.

    With ``n = 0`` observations this is the prior. Otherwise the mean is
    ``m(x') + k_{x'} K^{-1} (f_x - m_x)`` and the covariance
    ``k(x', x') - k_{x'} K^{-1} k_{x'}^T``, where ``K`` includes
    ``noise_var`` on its diagonal plus the standard jitter.
    """
    x_query = np.asarray(x_query, dtype=np.float64)
    mq = _resolve_mean_fn(mean_fn, x_query)
    kqq = kernel_gram(kernel, x_query) if full_cov else None
    if X is None or np.shape(X)[0] == 0:
        if full_cov:
            return Gaussian(mq, kqq)
        q = x_query.shape[0]
        return Gaussian(mq, kernel.signal_var * np.ones(q))

    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    mx = _resolve_mean_fn(mean_fn, X)
    K = kernel_gram(kernel, X)
    if noise_var:
        K = K + float(noise_var) * np.eye(n)
    L = chol_jittered(K, min_rel=KERNEL_JITTER)
    kq = kernel_gram(kernel, x_query, X)          # (q, n)
    resid = (fX - mx).reshape(n, 1)
    alpha = tri_solve(L, tri_solve(L, resid), lower=True, trans=True)
    mean = mq + (kq @ alpha).reshape(x_query.shape[0])
    V = tri_solve(L, mT(kq))                      # (n, q)
    if full_cov:
        cov = kqq - mT(V) @ V
        return Gaussian(mean, cov)
    var = kernel.signal_var - square(V).sum(axis=0)
    return Gaussian(mean, clip_min(var, 0.0))


def kernel_gram(kernel: Kernel, X, X2=None):
    return kernel_matrix(kernel, X, X2)


def gaussian_kl(q: Gaussian, p: Gaussian):
    """Closed-form KL(q || p) between multivariate Gaussians; nonnegative."""
    if q.dim != p.dim:
        raise ValueError(f"dimension mismatch: {q.dim} vs {p.dim}")
    d = q.dim
    if q.is_diag and p.is_diag:
        ratio = q.cov / p.cov
        maha = square(q.mean - p.mean) / p.cov
        return 0.5 * (ratio + maha - 1.0 + log(p.cov) - log(q.cov)).sum()
    Sq = q.full_cov()
    Sp = p.full_cov()
    Lp = chol_jittered(Sp)
    Lq = chol_jittered(Sq)
    A = tri_solve(Lp, Lq)                          # Lp^{-1} Lq
    trace = square(A).sum()
    diff = (p.mean - q.mean).reshape(d, 1)
    w = tri_solve(Lp, diff)
    maha = square(w).sum()
    logdet = log(diag_part(Lp)).sum() - log(diag_part(Lq)).sum()
    return 0.5 * (trace + maha - d) + logdet


@dataclass
class SparseGP:
    """Independent sparse GPs for each output dimension with shared inducing inputs.

    Hyperparameters live in log space: ``log_sf2`` is ``(d_out, 1, 1)``,
    ``log_ls`` is ``(d_out, d_in)``. The variational inducing distribution
    q(u) per output has mean ``qu_mean`` ``(d_out, M, 1)`` and covariance
    ``L L^T`` where ``L`` is assembled from ``qu_chol_raw`` ``(d_out, M, M)``
    by keeping the strict lower triangle and exponentiating the diagonal, so
    positive definiteness holds by construction.

    ``mean_cols`` selects, per output dimension, the input column whose
    value is added as an identity ("residual") mean function; ``None`` means
    a zero mean.
    """

    z: object                 # (M, d_in)
    log_sf2: object           # (d_out, 1, 1)
    log_ls: object            # (d_out, d_in)
    qu_mean: object           # (d_out, M, 1)
    qu_chol_raw: object       # (d_out, M, M)
    mean_cols: tuple | None = None

    @property
    def n_outputs(self) -> int:
        return int(np.shape(self.log_ls)[0])

    @property
    def n_inducing(self) -> int:
        return int(np.shape(self.z)[0])

    @property
    def n_inputs(self) -> int:
        return int(np.shape(self.z)[1])

    # -- parameter plumbing --------------------------------------------------

    _PARAM_FIELDS = ("z", "log_sf2", "log_ls", "qu_mean", "qu_chol_raw")

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.{f}": getattr(self, f) for f in self._PARAM_FIELDS}

    def with_params(self, prefix: str, values: dict) -> "SparseGP":
        kw = {f: values[f"{prefix}.{f}"] for f in self._PARAM_FIELDS}
        return replace(self, **kw)

    def kernels(self) -> list[Kernel]:
        """Per-output-dimension kernel objects built from current values."""
        sf2 = np.exp(_val(self.log_sf2)).reshape(self.n_outputs)
        ls = np.exp(_val(self.log_ls))
        return [Kernel(float(sf2[d]), ls[d]) for d in range(self.n_outputs)]

    @classmethod
    def create(cls, d_in: int, d_out: int, n_inducing: int, rng: np.random.Generator,
               z_init: np.ndarray | None = None, mean_cols: tuple | None = None,
               signal_var: float = 1.0, lengthscale: float = 1.0) -> "SparseGP":
        """Fresh sparse GP with q(u) initialized at the prior.

        ``z_init`` defaults to standard normal draws; pass rows subsampled
        from (normalized) training data when available.
        """
        if z_init is None:
            z_init = rng.standard_normal((n_inducing, d_in))
        z_init = np.asarray(z_init, dtype=np.float64)
        log_sf2 = np.full((d_out, 1, 1), np.log(signal_var))
        log_ls = np.full((d_out, d_in), np.log(lengthscale))
        sgp = cls(z_init, log_sf2, log_ls,
                  qu_mean=np.zeros((d_out, n_inducing, 1)),
                  qu_chol_raw=np.zeros((d_out, n_inducing, n_inducing)),
                  mean_cols=mean_cols)
        frozen = sgp.freeze()
        m_z = _val(frozen.m_z)
        Lz = _val(frozen.Lz)
        raw = np.tril(Lz, -1)
        idx = np.arange(n_inducing)
        raw[:, idx, idx] = np.log(np.maximum(_diagonal(Lz), 1e-12))
        return replace(sgp, qu_mean=m_z.copy(), qu_chol_raw=raw)

    def set_inducing_dist(self, means: np.ndarray, covs: np.ndarray) -> "SparseGP":
        """Return a copy with q(u) set to the given per-dimension moments.

        ``means`` is ``(d_out, M)``; ``covs`` is ``(d_out, M, M)``. Cholesky
        factors with non-positive diagonals are floored far below any
        tolerance of interest, so near-deterministic q(u) is representable.
        """
        d, M = self.n_outputs, self.n_inducing
        means = np.asarray(means, dtype=np.float64).reshape(d, M, 1)
        raw = np.zeros((d, M, M))
        for i in range(d):
            C = np.asarray(covs[i], dtype=np.float64)
            scale = max(np.mean(np.diag(C)), 0.0)
            L = np.linalg.cholesky(C + (1e-14 * max(scale, 1.0)) * np.eye(M))
            raw[i] = np.tril(L, -1)
            raw[i, np.arange(M), np.arange(M)] = np.log(np.maximum(np.diag(L), 1e-30))
        return replace(self, qu_mean=means, qu_chol_raw=raw)

    def freeze(self) -> "FrozenSparseGP":
        """Precompute every per-iteration quantity needed for prediction."""
        d = self.n_outputs
        M = self.n_inducing
        inv_ls = exp(-1.0 * self.log_ls)                     # (d, d_in)
        D = diag_embed(inv_ls)                               # (d, d_in, d_in)
        sf2 = exp(self.log_sf2)                              # (d, 1, 1)
        Zb = expand_batch(self.z, d)
        Zs = Zb @ D                                          # (d, M, d_in)
        znorm_col = square(Zs).sum(axis=2, keepdims=True)    # (d, M, 1)
        Kzz = rbf_from_scaled(sf2, Zs, Zs, znorm_col, mT(znorm_col))
        Lz = chol_jittered(Kzz, min_rel=KERNEL_JITTER)
        eye = np.broadcast_to(np.eye(M), (d, M, M)).copy()
        Kzz_inv = tri_solve(Lz, tri_solve(Lz, eye), lower=True, trans=True)

        mask = np.broadcast_to(np.tril(np.ones((M, M)), -1), (d, M, M)).copy()
        Lq = self.qu_chol_raw * mask + diag_embed(exp(diag_part(self.qu_chol_raw)))
        Squ = Lq @ mT(Lq)

        if self.mean_cols is None:
            m_z = np.zeros((d, M, 1))
        else:
            cols = list(self.mean_cols)
            m_z = mT(self.z[:, cols]).reshape(d, M, 1)
        alpha = Kzz_inv @ (self.qu_mean - m_z)
        G_margin = Kzz_inv - Kzz_inv @ Squ @ Kzz_inv
        return FrozenSparseGP(
            sgp=self, D=D, sf2_flat=sf2.reshape(d, 1), Zs=Zs, ZsT=mT(Zs),
            znorm_row=mT(znorm_col), Kzz=Kzz, Lz=Lz, Kzz_inv=Kzz_inv,
            Lq=Lq, Squ=Squ, m_z=m_z, alpha=alpha, G_margin=G_margin,
        )


def _diagonal(a: np.ndarray) -> np.ndarray:
    return np.diagonal(a, axis1=-2, axis2=-1)


@dataclass
class FrozenSparseGP:
    """Per-iteration cache of a sparse GP: factorizations and projections."""

    sgp: SparseGP
    D: object
    sf2_flat: object          # (d, 1)
    Zs: object
    ZsT: object
    znorm_row: object         # (d, 1, M)
    Kzz: object
    Lz: object
    Kzz_inv: object
    Lq: object
    Squ: object
    m_z: object
    alpha: object             # Kzz^{-1} (qu_mean - m_z)
    G_margin: object

    @property
    def n_outputs(self) -> int:
        return self.sgp.n_outputs

    def cross_kernel(self, X):
        """K(X, z) per output dimension, shaped ``(d_out, n, M)``."""
        Xb = expand_batch(X, self.n_outputs)
        Xs = Xb @ self.D
        xnorm = square(Xs).sum(axis=2, keepdims=True)
        sf2 = self.sf2_flat.reshape(self.n_outputs, 1, 1)
        return rbf_from_scaled(sf2, Xs, self.Zs, xnorm, self.znorm_row)

    def _mean_offset(self, X):
        if self.sgp.mean_cols is None:
            return None
        return X[:, list(self.sgp.mean_cols)]

    def sample_inducing(self, eps):
        """Inducing function values ``qu_mean + L_q eps`` for ``eps`` (d, M, S)."""
        return self.qu_mean_full() + self.Lq @ eps

    def qu_mean_full(self):
        return self.sgp.qu_mean

    def alpha_for(self, u_cols):
        """Per-column projections ``Kzz^{-1} (u - m_z)`` arranged ``(d, n, M)``.

        ``u_cols`` holds one inducing sample per prediction row, shaped
        ``(d, M, n)``.
        """
        return mT(self.Kzz_inv @ (u_cols - self.m_z))

    def predict(self, X, mode: str = "marginal", alpha_u=None):
        """Predictive mean and variance at rows of ``X``; both ``(n, d_out)``.

        Modes: ``marginal`` integrates q(u) out (independent per-query
        uncertainty), ``mean`` conditions on the q(u) mean, ``sample``
        conditions on per-row inducing samples supplied via ``alpha_u``.
        """
        Kxz = self.cross_kernel(X)                        # (d, n, M)
        if mode == "marginal":
            madj = (Kxz @ self.alpha)
            madj = madj.reshape(self.n_outputs, np.shape(X)[0])
            var = self.sf2_flat - ((Kxz @ self.G_margin) * Kxz).sum(axis=2)
        elif mode == "mean":
            madj = (Kxz @ self.alpha).reshape(self.n_outputs, np.shape(X)[0])
            var = self.sf2_flat - ((Kxz @ self.Kzz_inv) * Kxz).sum(axis=2)
        elif mode == "sample":
            if alpha_u is None:
                raise ValueError("mode='sample' requires alpha_u from alpha_for()")
            madj = (Kxz * alpha_u).sum(axis=2)
            var = self.sf2_flat - ((Kxz @ self.Kzz_inv) * Kxz).sum(axis=2)
        else:
            raise ValueError(f"unknown prediction mode {mode!r}")
        mean = mT(madj)
        offset = self._mean_offset(X)
        if offset is not None:
            mean = mean + offset
        return mean, clip_min(mT(var), VAR_FLOOR)

    def kl_inducing(self):
        """Sum over output dimensions of KL(q(u) || p(u))."""
        d, M = self.n_outputs, self.sgp.n_inducing
        A = tri_solve(self.Lz, self.Lq)
        trace = square(A).sum()
        w = tri_solve(self.Lz, self.qu_mean_full() - self.m_z)
        maha = square(w).sum()
        logdet = log(diag_part(self.Lz)).sum() - log(diag_part(self.Lq)).sum()
        return 0.5 * (trace + maha - d * M) + logdet


def sparse_predict(sgp: SparseGP, x_query, full_cov: bool = False) -> list[Gaussian]:
    """Predictive distribution of each output GP at the query points.

    Integrates the variational inducing distribution out in closed form:
    mean ``A qu_mean + m(x') - A m_z`` and covariance
    ``k(x', x') - A (Kzz - S_qu) A^T`` with ``A = k_{x'z} Kzz^{-1}``
    (``Kzz`` carrying its standard jitter on both occurrences). Returns one
    Gaussian per output dimension, diagonal unless ``full_cov``.
    """
    x_query = np.asarray(x_query, dtype=np.float64) if not isinstance(x_query, Var) else x_query
    if np.shape(x_query)[1] != sgp.n_inputs:
        raise ValueError(
            f"query dimension {np.shape(x_query)[1]} != inducing dimension {sgp.n_inputs}"
        )
    frozen = sgp.freeze()
    mean, var = frozen.predict(x_query, mode="marginal")
    out = []
    for dim in range(sgp.n_outputs):
        mu = mean[:, dim]
        if not full_cov:
            out.append(Gaussian(mu, var[:, dim]))
            continue
        Kxz = frozen.cross_kernel(x_query)[dim]
        Kqq = kernel_gram(sgp.kernels()[dim], _val(x_query))
        G = frozen.G_margin[dim]
        cov = Kqq - Kxz @ G @ mT(Kxz)
        out.append(Gaussian(mu, cov))
    return out
