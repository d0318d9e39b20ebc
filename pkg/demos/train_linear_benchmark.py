"""Training on a controlled AR(1) system, scored against the Kalman oracle.

The optimal open-loop predictor knows the true dynamics and propagates a
Kalman belief from the recognition window; a trained model only sees data.
Expect a couple of minutes of training.
"""

import numpy as np

from gpssm import TrainConfig, evaluate_on_dataset, simulate_linear, train
from gpssm.kalman import kalman_filter_smoother, kalman_open_loop

A, B, C, Q, R = [[0.9]], [[1.0]], [[1.0]], [[0.01]], [[0.0004]]
LAG = 5
data = simulate_linear(A, B, C, Q, R, T=100, n_traj=12, n_test=3, seed=0,
                       u_scale=1.0, lag=LAG)


def kalman_oracle_rmse():
    sq = []
    for tr in data.test:
        res = kalman_filter_smoother(A, B, C, Q, R, tr.y[:LAG], tr.u[:LAG],
                                     m0=np.zeros(1), P0=np.eye(1))
        m, P = res.filtered_means[-1], res.filtered_covs[-1]
        m = np.asarray(A) @ m + np.asarray(B) @ tr.u[LAG - 1]
        P = np.asarray(A) @ P @ np.asarray(A).T + np.asarray(Q)
        means, _ = kalman_open_loop(A, B, C, Q, R, m, P, tr.u[LAG:])
        sq.append((means - tr.y[LAG:]) ** 2)
    return float(np.sqrt(np.mean(np.concatenate(sq))))


oracle = kalman_oracle_rmse()
print(f"optimal Kalman predictor rmse (raw scale): {oracle:.4f}")

cfg = TrainConfig(algorithm="PRSSM", latent_dim=1, n_inducing=20, seq_len=30,
                  batch_size=8, n_samples=8, lag=LAG, seed=0, iterations=2500,
                  learning_rate=6e-3, mean_fn="identity", beta=0.02,
                  init_noise_x=0.1, init_noise_y=0.1, init_signal_var=1.0,
                  init_lengthscale=1.0)
model, trace = train(data.normalize(), cfg)
res = evaluate_on_dataset(model, data.normalize(), n_samples=100, seed=1)
print(f"trained model rmse (raw scale):            {res['rmse_raw']:.4f}")
print(f"ratio vs oracle:                           {res['rmse_raw'] / oracle:.2f}x")
print(f"ELBO: {trace[0].total:10.1f} -> {trace[-1].total:8.1f} over {len(trace)} iterations")
