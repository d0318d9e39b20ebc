"""Mean-square stability and what it does to open-loop rollouts.

A linear system with spectral radius >= 1 plus process noise has unbounded
predictive state covariance; unconditioned posterior samples spread without
limit, which is exactly what breaks likelihood-based training on long
windows. A contractive system saturates at its stationary covariance.
"""

import numpy as np

from gpssm import mss_check, predict_open_loop
from gpssm.ssm import LinearTransition, RecognitionModule, SSMModel


def rollout_variance(radius: float, T: int = 100, samples: int = 2000):
    model = SSMModel(
        d_x=1, d_y=1, d_u=1,
        forward_gp=LinearTransition([[radius]], [[0.0]]),
        backward_gp=None,
        log_noise_x=np.log(np.full((1, 1), 1.0)),
        log_noise_y=np.log(np.full((1, 1), 1e-6)),
        log_noise_pseudo=np.log(np.full((1, 1), 0.01)),
        recognition=RecognitionModule.create(3, 3 * 2, 1),
        terminal_recognition=None,
    )
    preds = predict_open_loop(model, np.zeros((3, 1)), np.zeros((T, 1)),
                              n_samples=samples, seed=0, lag=3)
    return np.array([g.cov[0] for g in preds])


for radius in (0.9, 1.0, 1.05):
    verdict = mss_check([[radius]])
    var = rollout_variance(radius)
    stationary = 1.0 / (1.0 - radius**2) if radius < 1 else float("inf")
    print(f"radius {radius:.2f}  mean-square stable: {verdict['is_mss']}")
    print(f"  rollout variance at t = 10/50/97: "
          f"{var[10]:10.1f} {var[50]:12.1f} {var[-1]:14.1f}"
          f"   (stationary: {stationary:.1f})")
