"""The conditioned rollout collapses to the Kalman filter on linear systems.

With the transition model pinned to a fixed linear map with zero
predictive variance, the VCDT-style conditioning step (k=1) applied to
each one-step prior is algebraically the Kalman measurement update. This
script runs both side by side on a random system.
"""

import numpy as np

from gpssm.inference import forward_pass
from gpssm.kalman import kalman_update
from gpssm.ssm import LinearTransition, RecognitionModule, SamplingStrategy, SSMModel

A = np.array([[0.9, 0.1], [0.0, 0.8]])
B = np.array([[1.0], [0.5]])
Q, R = 0.04, 0.0225

recog = RecognitionModule.create(3, 3 * 3, 2)
recog.bias[0, :2] = [0.3, -0.2]           # initial mean
recog.bias[0, 2:] = np.log(0.25)          # initial variance
model = SSMModel(
    d_x=2, d_y=2, d_u=1,
    forward_gp=LinearTransition(A, B), backward_gp=None,
    log_noise_x=np.log(np.full((1, 2), Q)),
    log_noise_y=np.log(np.full((1, 2), 0.01)),
    log_noise_pseudo=np.log(np.full((1, 2), R)),
    recognition=recog, terminal_recognition=None, k_soft=1.0,
)

rng = np.random.default_rng(0)
T = 10
y = rng.normal(size=(1, T, 2))
u = rng.normal(size=(1, T, 1))

roll = forward_pass(model, y, u, "VCDT", strategy=SamplingStrategy.MEAN_INDUCING,
                    n_samples=1, seed=5, k_soft=1.0, collect=True)

print(f"{'t':>3} {'max |mean - kalman|':>22} {'max |var - kalman|':>22}")
for t, ((mu_m, var_m), (mu_c, var_c)) in enumerate(zip(roll.prior_moments,
                                                       roll.post_moments)):
    m_ref, P_ref = kalman_update(mu_m[0], np.diag(var_m[0]), y[0, t + 1],
                                 np.eye(2), np.diag(np.full(2, R)))
    dm = np.abs(mu_c[0] - m_ref).max()
    dv = np.abs(var_c[0] - np.diag(P_ref)).max()
    print(f"{t + 1:>3} {dm:>22.3e} {dv:>22.3e}")
