"""Squared-exponential kernels with automatic relevance determination.

All functions accept either plain numpy arrays or tape variables, so the
same code serves fast prediction and gradient-based training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Var, exp, mT, square


@dataclass(frozen=True)
class Kernel:
    """Squared-exponential ARD kernel: ``k(x, x') = s2 * exp(-0.5 ||(x-x')/l||^2)``.

    ``signal_var`` is ``k(x, x)`` for every input; ``lengthscales`` has one
    positive entry per input dimension.
    """

    signal_var: float
    lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=np.float64))
        object.__setattr__(self, "lengthscales", ls)
        if self.signal_var <= 0 or np.any(ls <= 0):
            raise ValueError("signal variance and lengthscales must be positive")

    @property
    def n_inputs(self) -> int:
        return self.lengthscales.shape[0]


def scaled_sqdist(Xs, Zs, xnorm=None, znorm=None):
    """Pairwise squared distances between pre-scaled inputs.

    ``Xs`` is ``(n, d)`` or ``(k, n, d)``; ``Zs`` likewise. Optional
    ``xnorm``/``znorm`` are cached row norms shaped ``(..., n, 1)`` and
    ``(..., 1, m)``.
    """
    if xnorm is None:
        xnorm = square(Xs).sum(axis=-1, keepdims=True)
    if znorm is None:
        znorm = mT(square(Zs).sum(axis=-1, keepdims=True))
    d2 = xnorm + znorm - 2.0 * (Xs @ mT(Zs))
    return d2


def rbf_from_scaled(sf2, Xs, Zs, xnorm=None, znorm=None):
    """Kernel matrix from pre-scaled inputs and signal variance ``sf2``."""
    return sf2 * exp(-0.5 * scaled_sqdist(Xs, Zs, xnorm, znorm))


def kernel_matrix(kernel: Kernel, X, X2=None):
    """Kernel matrix with entry ``(i, j) = k(X_i, X2_j)``.

    ``X`` is ``(n, d)`` with ``d`` matching the kernel's lengthscale count;
    ``X2`` defaults to ``X`` (symmetric Gram matrix).
    """
    if not isinstance(X, Var):
        X = np.asarray(X, dtype=np.float64)
    if np.ndim(X) != 2 or X.shape[1] != kernel.n_inputs:
        raise ValueError(
            f"X must be (n, {kernel.n_inputs}), got {np.shape(X)}"
        )
    if X2 is None:
        X2 = X
    elif np.shape(X2)[1] != kernel.n_inputs:
        raise ValueError(
            f"X2 must be (m, {kernel.n_inputs}), got {np.shape(X2)}"
        )
    inv_ls = (1.0 / kernel.lengthscales).reshape(1, -1)
    Xs = X * inv_ls
    Zs = X2 * inv_ls
    return rbf_from_scaled(kernel.signal_var, Xs, Zs)
