"""How the softened Kalman gain interpolates between filtering and ignoring.

The conditioning step blends a one-step prior N(mu-, s-) with a
pseudo-observation y~ of variance s~ using the gain
K = s- / (s~ + k s-). At k=1 this is the exact Kalman update; as k grows
the update fades away and the prior passes through untouched.
"""

import numpy as np

from gpssm import Gaussian, soft_condition
from gpssm.kalman import kalman_update

prior = Gaussian(np.array([1.0]), np.array([0.5]))
obs, obs_var = np.array([3.0]), np.array([0.5])

print(f"prior: mean {prior.mean[0]:+.4f}  var {prior.cov[0]:.4f}")
print(f"pseudo-observation: {obs[0]:+.4f}  var {obs_var[0]:.4f}\n")

print(f"{'k':>10} {'gain':>8} {'mean':>8} {'var':>8}")
for k in [1, 2, 5, 10, 50, 1000, 1e9]:
    post = soft_condition(prior, obs, obs_var, k=k)
    gain = prior.cov[0] / (obs_var[0] + k * prior.cov[0])
    print(f"{k:>10.0f} {gain:>8.4f} {post.mean[0]:>8.4f} {post.cov[0]:>8.4f}")

# k = 1 reproduces the textbook Kalman measurement update exactly
post = soft_condition(prior, obs, obs_var, k=1.0)
m_ref, P_ref = kalman_update(prior.mean, np.diag(prior.cov), obs,
                             np.eye(1), np.diag(obs_var))
print(f"\nk=1 vs Kalman update: |mean diff| = {abs(post.mean[0] - m_ref[0]):.2e}, "
      f"|var diff| = {abs(post.cov[0] - P_ref[0, 0]):.2e}")

# the posterior variance never exceeds the prior variance, for any k >= 1
rng = np.random.default_rng(0)
worst = 0.0
for _ in range(1000):
    s, so, k = rng.uniform(0.01, 5.0), rng.uniform(0.01, 5.0), 1 + rng.exponential(20)
    p = soft_condition(Gaussian(np.zeros(1), np.array([s])),
                       np.array([1.0]), np.array([so]), k=k)
    worst = max(worst, float(p.cov[0] - s))
print(f"max posterior-minus-prior variance over 1000 random cases: {worst:.2e} (<= 0)")
