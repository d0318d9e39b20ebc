"""State-space model primitives: transitions, observation, recognition and
the soft Kalman conditioning step.

The latent state has dimension ``d_x``; the first ``d_y`` components are
observed through the fixed selector ``C = [I 0]`` with diagonal noise. The
forward transition GP maps ``(x, u)`` to the next state; the backward GP
maps ``(x_next, u)`` to the *hidden* components of the previous pseudo-state
(the observed components of a pseudo-state are clamped to the measurement,
so only ``d_x - d_y`` outputs are modelled).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .autodiff import Var, concat, exp, log, square
from .gp import Gaussian, SparseGP

VAR_FLOOR = 1e-12


class SamplingStrategy(Enum):
    """How transition-function values are drawn along a rollout."""

    INDEPENDENT_PER_STEP = "independent"        # marginalize q(u) at every step
    SAMPLED_INDUCING_PER_TRAJECTORY = "trajectory"  # one u-sample per trajectory
    MEAN_INDUCING = "mean"                      # condition on the q(u) mean

    @classmethod
    def parse(cls, name) -> "SamplingStrategy":
        if isinstance(name, cls):
            return name
        for member in cls:
            if name in (member.value, member.name, member.name.lower()):
                return member
        raise ValueError(f"unknown sampling strategy {name!r}")


_PREDICT_MODE = {
    SamplingStrategy.INDEPENDENT_PER_STEP: "marginal",
    SamplingStrategy.SAMPLED_INDUCING_PER_TRAJECTORY: "sample",
    SamplingStrategy.MEAN_INDUCING: "mean",
}


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


@dataclass
class RecognitionModule:
    """Affine map from flattened features to a diagonal Gaussian.

    Produces ``mean`` and ``log variance`` of dimension ``d_out`` from an
    input feature vector; used both for q(x_1 | y_{1:t'}, u_{1:t'}) and for
    the terminal pseudo-state q(x~_T | y_T).
    """

    lag: int
    d_out: int
    weights: object           # (d_in, 2*d_out)
    bias: object              # (1, 2*d_out)

    @classmethod
    def create(cls, lag: int, d_in: int, d_out: int) -> "RecognitionModule":
        # zero init: N(0, I) regardless of input
        return cls(lag, d_out, np.zeros((d_in, 2 * d_out)), np.zeros((1, 2 * d_out)))

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.weights": self.weights, f"{prefix}.bias": self.bias}

    def with_params(self, prefix: str, values: dict) -> "RecognitionModule":
        return replace(self, weights=values[f"{prefix}.weights"],
                       bias=values[f"{prefix}.bias"])

    def apply(self, features):
        """Batched features ``(B, d_in)`` to mean/log-variance ``(B, d_out)``."""
        out = features @ self.weights + self.bias
        return out[:, : self.d_out], out[:, self.d_out:]


def recognition_features(y, u, lag: int):
    """Stack the first ``lag`` observations and controls of each window."""
    y = np.asarray(y, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if y.ndim == 2:
        y = y[None]
        u = u[None]
    if y.shape[1] < lag:
        raise ValueError(f"need at least lag={lag} steps, got {y.shape[1]}")
    B = y.shape[0]
    return np.concatenate([y[:, :lag].reshape(B, -1), u[:, :lag].reshape(B, -1)], axis=1)


def recognize(recognition: RecognitionModule, y, u) -> Gaussian:
    """Initial-state distribution q(x_1 | y_{1:t'}, u_{1:t'}) for one sequence."""
    feats = recognition_features(y, u, recognition.lag)
    mean, logvar = recognition.apply(feats)
    if isinstance(mean, Var):
        return Gaussian(mean[0, :], exp(logvar)[0, :])
    return Gaussian(mean[0], np.exp(logvar[0]))


@dataclass
class LinearTransition:
    """Degenerate transition with a fixed linear mean and zero predictive variance.

    Stands in for a GP whose posterior has collapsed onto ``f(x, u) = A x + B u``;
    used to compare rollouts against linear-Gaussian oracles.
    """

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)

    @property
    def d_x(self) -> int:
        return self.A.shape[0]

    def params(self, prefix: str) -> dict:
        return {}

    def with_params(self, prefix: str, values: dict) -> "LinearTransition":
        return self

    def freeze(self) -> "FrozenLinearTransition":
        return FrozenLinearTransition(self)


@dataclass
class FrozenLinearTransition:
    lin: LinearTransition

    @property
    def n_outputs(self) -> int:
        return self.lin.d_x

    def predict(self, X, mode: str = "marginal", alpha_u=None):
        d_x = self.lin.d_x
        mean = X[:, :d_x] @ self.lin.A.T + X[:, d_x:] @ self.lin.B.T
        n = np.shape(X)[0]
        return mean, np.zeros((n, d_x))

    def sample_inducing(self, eps):
        return None

    def alpha_for(self, u_cols):
        return None

    def kl_inducing(self):
        return 0.0


@dataclass
class SSMModel:
    """All learnable pieces of the state-space model.

    Noise covariances are diagonal and log-parametrized. ``k_soft >= 1``
    scales the conditioning gain denominator; ``beta`` reweighs every KL
    term in the training objective. The initial-state prior p(x_1) is a
    fixed broad ``N(0, x1_prior_var I)``.
    """

    d_x: int
    d_y: int
    d_u: int
    forward_gp: object                     # SparseGP or LinearTransition
    backward_gp: SparseGP | None
    log_noise_x: object                    # (1, d_x)  process noise
    log_noise_y: object                    # (1, d_y)  observation noise
    log_noise_pseudo: object               # (1, d_x)  pseudo-observation noise
    recognition: RecognitionModule
    terminal_recognition: RecognitionModule | None
    k_soft: float = 1.0
    beta: float = 1.0
    x1_prior_var: float = 10.0

    def __post_init__(self):
        if self.k_soft < 1.0:
            raise ValueError("k_soft must be >= 1")

    @property
    def d_hidden(self) -> int:
        return self.d_x - self.d_y

    # -- parameter plumbing ----------------------------------------------

    def params(self) -> dict:
        out = dict(self.forward_gp.params("fgp"))
        if self.backward_gp is not None:
            out.update(self.backward_gp.params("bgp"))
        out["noise.log_x"] = self.log_noise_x
        out["noise.log_y"] = self.log_noise_y
        out["noise.log_pseudo"] = self.log_noise_pseudo
        out.update(self.recognition.params("recog"))
        if self.terminal_recognition is not None:
            out.update(self.terminal_recognition.params("trecog"))
        return out

    def with_params(self, values: dict) -> "SSMModel":
        new = replace(
            self,
            forward_gp=self.forward_gp.with_params("fgp", values),
            log_noise_x=values["noise.log_x"],
            log_noise_y=values["noise.log_y"],
            log_noise_pseudo=values["noise.log_pseudo"],
            recognition=self.recognition.with_params("recog", values),
        )
        if self.backward_gp is not None:
            new = replace(new, backward_gp=self.backward_gp.with_params("bgp", values))
        if self.terminal_recognition is not None:
            new = replace(new, terminal_recognition=self.terminal_recognition.with_params("trecog", values))
        return new

    def numeric(self) -> "SSMModel":
        """Copy with every parameter pulled back to a plain numpy array."""
        return self.with_params({k: _val(v).copy() for k, v in self.params().items()})

    def bind(self, tape) -> "SSMModel":
        """Copy whose parameters are differentiable leaves of ``tape``."""
        return self.with_params({k: tape.leaf(k, _val(v)) for k, v in self.params().items()})

    # -- noise accessors ----------------------------------------------------

    def noise_x(self):
        return exp(self.log_noise_x)

    def noise_y(self):
        return exp(self.log_noise_y)

    def noise_pseudo(self):
        return exp(self.log_noise_pseudo)

    @classmethod
    def create(cls, d_x: int, d_y: int, d_u: int, n_inducing: int, lag: int,
               rng: np.random.Generator, z_candidates: np.ndarray | None = None,
               mean_fn: str = "zero", k_soft: float = 1.0, beta: float = 1.0,
               noise_x: float = 0.01, noise_y: float = 0.01,
               noise_pseudo: float = 0.01, lengthscale: float = 1.0,
               signal_var: float = 1.0) -> "SSMModel":
        """Initialize a fresh model.

        ``z_candidates`` are rows in GP-input space ``(x, u)`` (normalized
        scale) to subsample for inducing inputs; hidden state columns are
        filled with unit-normal draws when candidates only cover observed
        components.
        """
        d_in = d_x + d_u
        if z_candidates is not None and len(z_candidates) >= n_inducing:
            pick = rng.choice(len(z_candidates), size=n_inducing, replace=False)
            z_init = np.asarray(z_candidates, dtype=np.float64)[np.sort(pick)]
        else:
            z_init = rng.standard_normal((n_inducing, d_in))
        fwd_cols = tuple(range(d_x)) if mean_fn == "identity" else None
        forward_gp = SparseGP.create(d_in, d_x, n_inducing, rng, z_init=z_init,
                                     mean_cols=fwd_cols, signal_var=signal_var,
                                     lengthscale=lengthscale)
        d_h = d_x - d_y
        backward_gp = None
        terminal = None
        if d_h > 0:
            bwd_cols = tuple(range(d_y, d_x)) if mean_fn == "identity" else None
            z_b = z_init + 0.01 * rng.standard_normal(z_init.shape)
            backward_gp = SparseGP.create(d_in, d_h, n_inducing, rng, z_init=z_b,
                                          mean_cols=bwd_cols, signal_var=signal_var,
                                          lengthscale=lengthscale)
            terminal = RecognitionModule.create(1, d_y, d_h)
        recognition = RecognitionModule.create(lag, lag * (d_y + d_u), d_x)
        return cls(
            d_x=d_x, d_y=d_y, d_u=d_u,
            forward_gp=forward_gp, backward_gp=backward_gp,
            log_noise_x=np.full((1, d_x), np.log(noise_x)),
            log_noise_y=np.full((1, d_y), np.log(noise_y)),
            log_noise_pseudo=np.full((1, d_x), np.log(noise_pseudo)),
            recognition=recognition, terminal_recognition=terminal,
            k_soft=k_soft, beta=beta,
        )


# --- observation model -------------------------------------------------------

def observe(model: SSMModel, x) -> Gaussian:
    """Distribution of ``y`` given a state sample or state distribution.

    For a sample: ``N(C x, noise_y)``. For a Gaussian state:
    ``N(C mean, C cov C^T + noise_y)`` (diagonal covariances stay diagonal).
    """
    sy = model.noise_y().reshape(model.d_y)
    if isinstance(x, Gaussian):
        mean = x.mean[..., : model.d_y]
        if x.is_diag:
            return Gaussian(mean, x.cov[..., : model.d_y] + sy)
        return Gaussian(mean, x.cov[: model.d_y, : model.d_y] + np.diag(_val(sy)))
    return Gaussian(x[..., : model.d_y], sy * np.ones(model.d_y))


# --- soft conditioning -------------------------------------------------------

def soft_condition(prior: Gaussian, pseudo_obs, pseudo_var, k: float) -> Gaussian:
    """Condition a Gaussian prior on a same-dimension pseudo-observation.

    The gain ``K = P (S + k P)^{-1}`` interpolates between the exact Kalman
    update (k=1) and no update (k -> inf). The posterior covariance uses the
    Joseph form ``(I-K) P (I-K)^T + K S K^T``, which stays PSD for any gain.
    Diagonal priors with diagonal pseudo-noise take the elementwise path.
    """
    if k < 1.0:
        raise ValueError("soft conditioning requires k >= 1")
    if prior.is_diag and np.ndim(pseudo_var) == np.ndim(prior.cov):
        gain = prior.cov / (pseudo_var + k * prior.cov)
        mean = prior.mean + gain * (pseudo_obs - prior.mean)
        one_m = 1.0 - gain
        var = square(one_m) * prior.cov + square(gain) * pseudo_var
        return Gaussian(mean, var)
    # full-covariance path (numpy only; rollouts use the diagonal path above)
    P = _val(prior.full_cov())
    d = prior.dim
    if np.ndim(pseudo_var) == 2:
        S = _val(pseudo_var)
    else:
        S = np.diag(np.broadcast_to(_val(pseudo_var), (d,)).astype(np.float64))
    gain = np.linalg.solve((S + k * P).T, P.T).T
    IK = np.eye(d) - gain
    mean = _val(prior.mean) + gain @ (np.asarray(pseudo_obs, dtype=np.float64) - _val(prior.mean))
    cov = IK @ P @ IK.T + gain @ S @ gain.T
    return Gaussian(mean, cov)


def conditioning_kl(post: Gaussian, prior: Gaussian):
    """KL(post || prior) for diagonal Gaussians, summed over components."""
    ratio = post.cov / prior.cov
    maha = square(post.mean - prior.mean) / prior.cov
    return 0.5 * (ratio + maha - 1.0 + log(prior.cov) - log(post.cov)).sum()


# --- transitions -------------------------------------------------------------

@dataclass
class StrategyState:
    """Frozen transition model plus any per-trajectory sampling state."""

    frozen: object
    strategy: SamplingStrategy
    alpha_u: object = None     # per-row inducing projections for sampled-u mode

    @property
    def mode(self) -> str:
        return _PREDICT_MODE[self.strategy]


def make_strategy_state(frozen, strategy: SamplingStrategy, n_rows: int,
                        rng: np.random.Generator | None = None,
                        n_samples: int | None = None) -> StrategyState:
    """Draw any per-trajectory state the sampling strategy requires.

    For per-trajectory inducing sampling, one u-draw is made per Monte-Carlo
    sample and laid out across the ``n_rows`` prediction rows (each sample's
    draw repeated over its batch rows).
    """
    strategy = SamplingStrategy.parse(strategy)
    if strategy is not SamplingStrategy.SAMPLED_INDUCING_PER_TRAJECTORY:
        return StrategyState(frozen, strategy)
    if isinstance(frozen, FrozenLinearTransition):
        return StrategyState(frozen, strategy)
    d, M = frozen.n_outputs, frozen.sgp.n_inducing
    S = n_samples if n_samples is not None else n_rows
    eps = rng.standard_normal((d, M, S))
    u = frozen.sample_inducing(eps)                       # (d, M, S)
    if S != n_rows:
        reps = n_rows // S
        cols = np.tile(np.arange(S), reps)                # row n = b*S + s
        sel = np.zeros((S, n_rows))
        sel[cols, np.arange(n_rows)] = 1.0
        u = u @ sel
    return StrategyState(frozen, strategy, alpha_u=frozen.alpha_for(u))


def forward_prior(model: SSMModel, strategy_state: StrategyState, x_t, u_t) -> Gaussian:
    """One-step prior ``N(mu-, Sigma-)`` over the next state given a sample.

    The mean and ``Sigma- minus process noise`` come from the transition
    model's predictive distribution under the active sampling strategy.
    """
    x_t = np.atleast_2d(_val(x_t)) if not isinstance(x_t, Var) else x_t
    u_t = np.atleast_2d(_val(u_t)) if not isinstance(u_t, Var) else u_t
    XU = concat([x_t, u_t], axis=1)
    mean, var = strategy_state.frozen.predict(XU, strategy_state.mode,
                                              strategy_state.alpha_u)
    var = var + model.noise_x()
    if np.shape(mean)[0] == 1:
        return Gaussian(mean[0, :], var[0, :])
    return Gaussian(mean, var)


def backward_step(model: SSMModel, x_tilde_next, u_t, y_t,
                  frozen_backward=None) -> Gaussian:
    """Distribution of the previous pseudo-state in the reverse-time model.

    The observed components are clamped exactly to ``y_t`` (zero variance);
    hidden components follow the backward GP's predictive distribution at
    ``(x_tilde_next, u_t)``.
    """
    y_t = np.asarray(y_t, dtype=np.float64)
    if model.d_hidden == 0:
        return Gaussian(y_t, np.zeros(model.d_y))
    if frozen_backward is None:
        frozen_backward = model.backward_gp.freeze()
    x_next = np.atleast_2d(_val(x_tilde_next)) if not isinstance(x_tilde_next, Var) else x_tilde_next
    u_row = np.atleast_2d(_val(u_t)) if not isinstance(u_t, Var) else u_t
    XU = concat([x_next, u_row], axis=1)
    mean_h, var_h = frozen_backward.predict(XU, "marginal")
    mean = concat([y_t.reshape(1, model.d_y), mean_h], axis=1)
    var = concat([np.zeros((1, model.d_y)), var_h], axis=1)
    return Gaussian(mean[0, :], var[0, :])
