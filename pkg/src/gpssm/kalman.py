"""Linear-Gaussian filtering and smoothing (plain numpy, no autodiff).

Serves as the independent oracle for the conditioning step and the rollout
machinery, and as a reference predictor for linear benchmark systems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class KalmanResult:
    """Per-step posterior moments from a filter/smoother run."""

    predicted_means: np.ndarray    # (T, d)   p(x_t | y_{1:t-1})
    predicted_covs: np.ndarray     # (T, d, d)
    filtered_means: np.ndarray     # (T, d)   p(x_t | y_{1:t})
    filtered_covs: np.ndarray
    smoothed_means: np.ndarray     # (T, d)   p(x_t | y_{1:T})
    smoothed_covs: np.ndarray
    log_likelihood: float


def kalman_update(mean, cov, y, H, R):
    """One textbook measurement update: returns posterior mean and covariance.

    Uses the Joseph-form covariance ``(I-KH) P (I-KH)^T + K R K^T`` for
    numerical symmetry.
    """
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    S = H @ cov @ H.T + R
    K = np.linalg.solve(S.T, (cov @ H.T).T).T
    innov = np.asarray(y, dtype=np.float64) - H @ mean
    post_mean = mean + K @ innov
    IKH = np.eye(cov.shape[0]) - K @ H
    post_cov = IKH @ cov @ IKH.T + K @ R @ K.T
    return post_mean, post_cov


def kalman_filter_smoother(A, B, C, Q, R, y, u=None, m0=None, P0=None) -> KalmanResult:
    """Forward Kalman filter plus RTS backward smoother for a linear SSM.

    Model: ``x_{t+1} = A x_t + B u_t + w``, ``y_t = C x_t + v`` with
    ``w ~ N(0, Q)`` and ``v ~ N(0, R)``. Returns exact predicted, filtered
    and smoothed marginals together with the data log-likelihood.
    """
    A = np.asarray(A, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = A.shape[0]
    T = y.shape[0]
    if u is None or B is None:
        u = np.zeros((T, 0))
        B = np.zeros((d, 0))
    else:
        u = np.asarray(u, dtype=np.float64)
        B = np.asarray(B, dtype=np.float64)
    m = np.zeros(d) if m0 is None else np.asarray(m0, dtype=np.float64)
    P = np.eye(d) if P0 is None else np.asarray(P0, dtype=np.float64)

    pm = np.zeros((T, d))
    pc = np.zeros((T, d, d))
    fm = np.zeros((T, d))
    fc = np.zeros((T, d, d))
    loglik = 0.0
    for t in range(T):
        pm[t] = m
        pc[t] = P
        S = C @ P @ C.T + R
        sign, logdet = np.linalg.slogdet(S)
        if sign <= 0:
            raise np.linalg.LinAlgError("singular innovation covariance")
        innov = y[t] - C @ m
        loglik += -0.5 * (innov @ np.linalg.solve(S, innov)
                          + logdet + len(innov) * np.log(2 * np.pi))
        m, P = kalman_update(m, P, y[t], C, R)
        fm[t] = m
        fc[t] = P
        if t < T - 1:
            m = A @ m + B @ u[t]
            P = A @ P @ A.T + Q

    sm = fm.copy()
    sc = fc.copy()
    for t in range(T - 2, -1, -1):
        P_pred = A @ fc[t] @ A.T + Q
        G = np.linalg.solve(P_pred.T, (fc[t] @ A.T).T).T
        sm[t] = fm[t] + G @ (sm[t + 1] - (A @ fm[t] + B @ u[t]))
        sc[t] = fc[t] + G @ (sc[t + 1] - P_pred) @ G.T
    return KalmanResult(pm, pc, fm, fc, sm, sc, float(loglik))


def kalman_open_loop(A, B, C, Q, R, m0, P0, u) -> tuple[np.ndarray, np.ndarray]:
    """Observation-space open-loop predictions from a known initial belief.

    Rolls the moments forward with no measurement updates; returns per-step
    observation means ``(T, d_y)`` and covariances ``(T, d_y, d_y)``.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    m = np.asarray(m0, dtype=np.float64).copy()
    P = np.asarray(P0, dtype=np.float64).copy()
    T = u.shape[0]
    means = np.zeros((T, C.shape[0]))
    covs = np.zeros((T, C.shape[0], C.shape[0]))
    for t in range(T):
        means[t] = C @ m
        covs[t] = C @ P @ C.T + R
        m = A @ m + B @ u[t]
        P = A @ P @ A.T + Q
    return means, covs
