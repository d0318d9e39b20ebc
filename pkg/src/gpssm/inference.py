"""Posterior rollouts, evidence lower bounds, training and prediction.

Three approximate posteriors share one rollout engine:

* ``PRSSM``  — no measurement conditioning; the next-state distribution is
  the one-step prior.
* ``VCDT``   — each transition is conditioned on the next raw observation
  (observed state components only).
* ``CBFSSM`` — a reverse-time pass first smooths future observations into
  pseudo-states; each forward transition is then conditioned on the
  corresponding pseudo-state with a softened Kalman gain ``k >= 1``.

Random draws come from per-purpose seeded streams so that algorithms with
shared seeds consume identical noise for the parts they share (this is what
makes the limit identities CBFSSM(k->inf) = PRSSM and, under full
observation, CBFSSM(k=1) = VCDT(k=1) hold sample-for-sample).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tape, Var, clip_min, concat, exp, gradient, log, sqrt, square
from .data import Dataset, denormalize_predictions, subsequences
from .gp import Gaussian
from .kalman import kalman_filter_smoother  # noqa: F401  (re-exported oracle)
from .ssm import (
    SamplingStrategy,
    SSMModel,
    make_strategy_state,
    recognition_features,
)

ALGORITHMS = ("PRSSM", "VCDT", "CBFSSM")

DEFAULT_STRATEGY = {
    "PRSSM": SamplingStrategy.INDEPENDENT_PER_STEP,
    "VCDT": SamplingStrategy.SAMPLED_INDUCING_PER_TRAJECTORY,
    "CBFSSM": SamplingStrategy.INDEPENDENT_PER_STEP,
}

DEFAULT_K_SOFT = {"PRSSM": 1.0, "VCDT": 1.0, "CBFSSM": 50.0}

_LOG_2PI = np.log(2.0 * np.pi)


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def rollout_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent, purpose-keyed random streams derived from one seed."""
    names = ("x1", "forward", "backward", "inducing_f", "inducing_b", "eval")
    return {
        name: np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(i,)))
        for i, name in enumerate(names)
    }


@dataclass
class Rollout:
    """Sampled trajectories plus the accumulated stochastic ELBO pieces."""

    algorithm: str
    states: list                      # per step t: (N, d_x) samples
    log_lik: object                   # sum_t mean_rows log p(y_t | x_t)
    kl_conditioning: object           # sum_t mean_rows KL(q(x_{t+1}|..) || prior)
    kl_recognition: object            # mean over windows of KL(q(x_1|..) || p(x_1))
    n_batch: int
    n_samples: int
    seed: int
    strategy: SamplingStrategy
    frozen_forward: object = None
    frozen_backward: object = None
    prior_moments: list = field(default_factory=list)    # (mean, var) per transition
    post_moments: list = field(default_factory=list)
    pred_obs: list = field(default_factory=list)         # per-step Gaussian over y
    pseudo_states: list | None = None


@dataclass
class ELBOTerms:
    """Additive pieces of the evidence lower bound for one minibatch."""

    likelihood: object
    kl_inducing_forward: object
    kl_inducing_backward: object
    kl_recognition: object
    kl_conditioning: object
    beta: float
    inducing_scale: float
    total: object

    def detach(self) -> "ELBOTerms":
        return ELBOTerms(*(float(_val(getattr(self, f))) for f in
                           ("likelihood", "kl_inducing_forward", "kl_inducing_backward",
                            "kl_recognition", "kl_conditioning")),
                         beta=self.beta, inducing_scale=self.inducing_scale,
                         total=float(_val(self.total)))


@dataclass
class TrainConfig:
    """Hyperparameters of one training run."""

    algorithm: str = "CBFSSM"
    strategy: SamplingStrategy | str | None = None
    k_soft: float | None = None
    beta: float = 1.0
    learning_rate: float = 1e-3
    iterations: int = 1000
    n_samples: int = 8                # Monte-Carlo samples per rollout
    seq_len: int = 50                 # training subsequence length
    batch_size: int = 8
    lag: int = 5                      # recognition window t'
    seed: int = 0
    n_inducing: int = 20
    eval_samples: int = 100
    mean_fn: str = "identity"         # 'identity' or 'zero'
    latent_dim: int | None = None     # d_x; defaults to d_y (fully observed)
    init_noise_x: float | None = None      # None: quarter of the signal scale
    init_noise_y: float | None = None
    init_noise_pseudo: float = 0.01
    init_signal_var: float | None = None   # None: match the data's residual scale
    init_lengthscale: float = 2.0
    grad_clip: float = 100.0
    warmup: int = 100                 # linear learning-rate ramp iterations

    def resolved(self) -> "TrainConfig":
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        strategy = self.strategy or DEFAULT_STRATEGY[self.algorithm]
        k = self.k_soft if self.k_soft is not None else DEFAULT_K_SOFT[self.algorithm]
        return replace(self, strategy=SamplingStrategy.parse(strategy), k_soft=float(k))


def _repeat_rows(a: np.ndarray, s: int) -> np.ndarray:
    """(B, ...) -> (B*s, ...), each row repeated s times (row n = b*s + i)."""
    return np.repeat(a, s, axis=0)


def _rep_matrix(B: int, S: int) -> np.ndarray:
    """Constant (B*S, B) matrix mapping per-window rows to per-sample rows."""
    return np.kron(np.eye(B), np.ones((S, 1)))


def _gaussian_loglik_rows(y, mean, log_var):
    """Row-wise diagonal Gaussian log density, summed over components."""
    sq = square(y - mean) / exp(log_var)
    return (-0.5 * (sq + log_var + _LOG_2PI)).sum(axis=1)


def _diag_kl_rows(mean_q, var_q, mean_p, var_p):
    """Row-wise KL between diagonal Gaussians, summed over components."""
    ratio = var_q / var_p
    maha = square(mean_q - mean_p) / var_p
    return 0.5 * (ratio + maha - 1.0 + log(var_p) - log(var_q)).sum(axis=1)


def _sample_initial_state(model: SSMModel, y, u, S: int, rng) -> tuple:
    """Recognition-draw of x_1 for every window/sample row plus its KL."""
    B = y.shape[0]
    feats = recognition_features(y, u, model.recognition.lag)
    mean_b, logvar_b = model.recognition.apply(feats)
    rep = _rep_matrix(B, S)
    mean = rep @ mean_b
    logvar = rep @ logvar_b
    eps = rng.standard_normal((B * S, model.d_x))
    x1 = mean + sqrt(exp(logvar)) * eps
    # mean over windows of KL(q(x1) || N(0, prior_var I))
    pv = model.x1_prior_var
    var_b = exp(logvar_b)
    kl_rows = 0.5 * (var_b / pv + square(mean_b) / pv - 1.0
                     + np.log(pv) - logvar_b).sum(axis=1)
    kl = kl_rows.sum() / B
    return x1, kl


def backward_pass(model: SSMModel, y: np.ndarray, u: np.ndarray, n_samples: int,
                  streams: dict, strategy: SamplingStrategy) -> tuple[list, list]:
    """Reverse-time smoothing of observations into pseudo-state samples.

    Returns per-step pseudo-state samples ``(N, d_x)`` and the variances to
    use when conditioning on them: observed components carry the learned
    pseudo-observation noise, hidden components add the backward model's
    predictive variance on top of it.
    """
    B, T, d_y = y.shape
    S = n_samples
    N = B * S
    d_h = model.d_hidden
    y_rep = _repeat_rows(y, S)
    u_rep = _repeat_rows(u, S)
    pseudo = model.noise_pseudo()                       # (1, d_x)
    pseudo_obs = pseudo[:, : model.d_y]
    ones_n = np.ones((N, 1))
    obs_var_rows = ones_n @ pseudo_obs                  # (N, d_y)

    samples: list = [None] * T
    cond_vars: list = [None] * T
    if d_h == 0:
        for t in range(T):
            samples[t] = y_rep[:, t]
            cond_vars[t] = obs_var_rows
        return samples, cond_vars

    pseudo_hid = pseudo[:, model.d_y:]
    rng = streams["backward"]
    frozen_b = model.backward_gp.freeze()
    state_b = make_strategy_state(frozen_b, strategy, N, streams["inducing_b"], S)

    # terminal pseudo-state from q(x~_T | y_T)
    mean_b, logvar_b = model.terminal_recognition.apply(y[:, T - 1])
    rep = _rep_matrix(B, S)
    mean_h = rep @ mean_b
    var_h = exp(rep @ logvar_b)
    eps = rng.standard_normal((N, d_h))
    hidden = mean_h + sqrt(var_h) * eps
    samples[T - 1] = concat([y_rep[:, T - 1], hidden], axis=1)
    cond_vars[T - 1] = concat([obs_var_rows, var_h + ones_n @ pseudo_hid], axis=1)

    for t in range(T - 2, -1, -1):
        XU = concat([samples[t + 1], u_rep[:, t]], axis=1)
        mean_h, var_h = state_b.frozen.predict(XU, state_b.mode, state_b.alpha_u)
        eps = rng.standard_normal((N, d_h))
        hidden = mean_h + sqrt(var_h) * eps
        samples[t] = concat([y_rep[:, t], hidden], axis=1)
        cond_vars[t] = concat([obs_var_rows, var_h + ones_n @ pseudo_hid], axis=1)
    return samples, cond_vars


def forward_pass(model: SSMModel, y: np.ndarray, u: np.ndarray, algorithm: str,
                 strategy: SamplingStrategy | str | None = None,
                 n_samples: int = 8, seed: int = 0, pseudo=None,
                 k_soft: float | None = None, collect: bool = False) -> Rollout:
    """Sample the approximate posterior over latent trajectories.

    ``y``/``u`` are window stacks ``(B, T, d_y)`` / ``(B, T, d_u)`` (a single
    window may be passed as ``(T, d)``). Per step: predict the one-step
    prior under the sampling strategy, condition it according to the
    algorithm, then sample the next state by reparametrization. Fully
    deterministic given ``seed``.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    y = np.asarray(y, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if y.ndim == 2:
        y = y[None]
        u = u[None]
    strategy = SamplingStrategy.parse(strategy or DEFAULT_STRATEGY[algorithm])
    k = float(k_soft if k_soft is not None else model.k_soft)

    B, T, d_y = y.shape
    S = n_samples
    N = B * S
    d_x, d_h = model.d_x, model.d_hidden
    streams = rollout_streams(seed)

    if algorithm == "CBFSSM" and pseudo is None:
        pseudo = backward_pass(model, y, u, S, streams, strategy)

    y_rep = _repeat_rows(y, S)
    u_rep = _repeat_rows(u, S)
    frozen_f = model.forward_gp.freeze()
    state_f = make_strategy_state(frozen_f, strategy, N, streams["inducing_f"], S)
    frozen_b = None
    if algorithm == "CBFSSM" and d_h > 0 and model.backward_gp is not None:
        frozen_b = model.backward_gp.freeze()

    x, kl_recog = _sample_initial_state(model, y, u, S, streams["x1"])
    noise_x = model.noise_x()                       # (1, d_x)
    log_ny = model.log_noise_y
    pseudo_noise = model.noise_pseudo()
    rng_f = streams["forward"]

    def obs_gaussian(state):
        obs = _val(state)[:, :d_y]
        return Gaussian(obs.mean(axis=0), obs.var(axis=0) + _val(exp(log_ny)).ravel())

    states = [x]
    prior_moments: list = []
    post_moments: list = []
    pred_obs: list = [obs_gaussian(x)] if collect else []
    log_lik = _gaussian_loglik_rows(y_rep[:, 0], x[:, :d_y], log_ny).sum() / N
    kl_cond = 0.0

    for t in range(T - 1):
        XU = concat([x, u_rep[:, t]], axis=1)
        mean_f, var_f = state_f.frozen.predict(XU, state_f.mode, state_f.alpha_u)
        mu_minus = mean_f
        var_minus = var_f + noise_x

        if algorithm == "PRSSM":
            mu_c, var_c = mu_minus, var_minus
        elif algorithm == "VCDT":
            obs_val = y_rep[:, t + 1]
            obs_var = pseudo_noise[:, :d_y]
            if d_h == 0:
                mu_c, var_c, kl_t = _condition_diag(mu_minus, var_minus, obs_val, obs_var, k)
            else:
                mu_o, var_o, kl_t = _condition_diag(
                    mu_minus[:, :d_y], var_minus[:, :d_y], obs_val, obs_var, k)
                mu_c = concat([mu_o, mu_minus[:, d_y:]], axis=1)
                var_c = concat([var_o, var_minus[:, d_y:]], axis=1)
            kl_cond = kl_cond + kl_t.sum() / N
        else:  # CBFSSM
            obs_val, obs_var = pseudo[0][t + 1], pseudo[1][t + 1]
            mu_c, var_c, kl_t = _condition_diag(mu_minus, var_minus, obs_val, obs_var, k)
            kl_cond = kl_cond + kl_t.sum() / N

        eps = rng_f.standard_normal((N, d_x))
        x = mu_c + sqrt(clip_min(var_c, 1e-12)) * eps
        states.append(x)
        log_lik = log_lik + _gaussian_loglik_rows(y_rep[:, t + 1], x[:, :d_y], log_ny).sum() / N
        if collect:
            prior_moments.append((mu_minus, var_minus))
            post_moments.append((mu_c, var_c))
            pred_obs.append(obs_gaussian(x))

    return Rollout(
        algorithm=algorithm, states=states, log_lik=log_lik,
        kl_conditioning=kl_cond, kl_recognition=kl_recog,
        n_batch=B, n_samples=S, seed=seed, strategy=strategy,
        frozen_forward=frozen_f, frozen_backward=frozen_b,
        prior_moments=prior_moments, post_moments=post_moments, pred_obs=pred_obs,
        pseudo_states=pseudo[0] if pseudo is not None else None,
    )


def _condition_diag(mu_minus, var_minus, obs_val, obs_var, k: float):
    """Soft Kalman update on diagonal moments; returns posterior and row KLs."""
    gain = var_minus / (obs_var + k * var_minus)
    mu = mu_minus + gain * (obs_val - mu_minus)
    var = square(1.0 - gain) * var_minus + square(gain) * obs_var
    kl_rows = _diag_kl_rows(mu, var, mu_minus, var_minus)
    return mu, var, kl_rows


def elbo(rollout: Rollout, model: SSMModel, T_full: float, T_sub: int,
         beta: float | None = None) -> ELBOTerms:
    """Assemble the evidence lower bound from a rollout.

    ``total = likelihood - beta * (s_u KL_u_fwd + s_u KL_u_bwd
    + KL_recognition + KL_conditioning)``. The inducing-point KLs are
    counted once per full trajectory and scaled by the window coverage
    ``T_sub / T_full``; when function values are drawn independently at
    every step the count is additionally multiplied by the trajectory
    length, giving ``s_u = T_sub``.
    """
    beta = model.beta if beta is None else float(beta)
    if rollout.strategy is SamplingStrategy.INDEPENDENT_PER_STEP:
        s_u = float(T_sub)
    else:
        s_u = float(T_sub) / float(T_full)
    kl_f = rollout.frozen_forward.kl_inducing()
    kl_b = rollout.frozen_backward.kl_inducing() if rollout.frozen_backward is not None else 0.0
    penalty = s_u * kl_f + s_u * kl_b + rollout.kl_recognition + rollout.kl_conditioning
    total = rollout.log_lik - beta * penalty
    return ELBOTerms(
        likelihood=rollout.log_lik,
        kl_inducing_forward=kl_f,
        kl_inducing_backward=kl_b,
        kl_recognition=rollout.kl_recognition,
        kl_conditioning=rollout.kl_conditioning,
        beta=beta, inducing_scale=s_u, total=total,
    )


# --- training ----------------------------------------------------------------

class _Adam:
    """Adaptive-moment optimizer over a named parameter dict."""

    def __init__(self, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for k, p in params.items():
            g = grads[k]
            m = self.m.get(k, np.zeros_like(p))
            v = self.v.get(k, np.zeros_like(p))
            m = self.b1 * m + (1 - self.b1) * g
            v = self.b2 * v + (1 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            out[k] = p - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


def _clip_gradients(grads: dict, max_norm: float) -> dict:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        return {k: g * scale for k, g in grads.items()}
    return grads


def init_model(dataset: Dataset, config: TrainConfig,
               rng: np.random.Generator | None = None) -> SSMModel:
    """Fresh model sized to a dataset, inducing inputs subsampled from it."""
    config = config.resolved()
    d_y = dataset.d_y
    d_u = dataset.d_u
    d_x = config.latent_dim or d_y
    if d_x < d_y:
        raise ValueError("latent dimension cannot be below the observed dimension")
    rng = rng or np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(99,)))
    rows = []
    for traj in dataset.train:
        hidden = rng.standard_normal((traj.length, d_x - d_y))
        rows.append(np.concatenate([traj.y, hidden, traj.u], axis=1))
    cands = np.concatenate(rows, axis=0) if rows else None
    signal_var = config.init_signal_var
    if signal_var is None:
        # match the GP prior to the scale of what it must explain: one-step
        # residuals under an identity mean, raw observations otherwise
        ys = np.concatenate([t.y for t in dataset.train], axis=0)
        if config.mean_fn == "identity":
            deltas = np.concatenate([np.diff(t.y, axis=0) for t in dataset.train], axis=0)
            signal_var = float(np.mean(deltas.var(axis=0)))
        else:
            signal_var = float(np.mean(ys.var(axis=0)))
        signal_var = max(signal_var, 1e-4)
    noise_x = config.init_noise_x if config.init_noise_x is not None \
        else max(0.25 * signal_var, 1e-5)
    noise_y = config.init_noise_y if config.init_noise_y is not None \
        else max(0.25 * signal_var, 1e-3)
    model = SSMModel.create(
        d_x=d_x, d_y=d_y, d_u=d_u, n_inducing=config.n_inducing, lag=config.lag,
        rng=rng, z_candidates=cands, mean_fn=config.mean_fn,
        k_soft=config.k_soft, beta=config.beta,
        noise_x=noise_x, noise_y=noise_y,
        noise_pseudo=config.init_noise_pseudo, signal_var=signal_var,
        lengthscale=config.init_lengthscale,
    )
    return model


def train(dataset: Dataset, config: TrainConfig,
          model: SSMModel | None = None,
          callback=None) -> tuple[SSMModel, list[ELBOTerms]]:
    """Doubly stochastic maximization of the ELBO.

    Minibatches are random subsequence windows; gradients flow through
    reparametrized trajectory samples. Bit-reproducible from
    ``config.seed``. Returns the trained model and the per-iteration ELBO
    trace. A non-finite loss skips the step and halves the learning rate
    once; a second occurrence raises with the offending term.
    """
    config = config.resolved()
    if not dataset.normalized:
        dataset = dataset.normalize()
    if model is None:
        model = init_model(dataset, config)
    T_full = float(np.mean([t.length for t in dataset.train]))
    windows = subsequences(dataset, config.seq_len, config.batch_size,
                           seed=int(np.random.SeedSequence(entropy=config.seed,
                                                           spawn_key=(7,)).generate_state(1)[0]))
    opt = _Adam(config.learning_rate)
    history: list[ELBOTerms] = []
    params = {k: _val(v).copy() for k, v in model.params().items()}
    nan_strikes = 0
    base_lr = config.learning_rate

    for it in range(config.iterations):
        if config.warmup > 0:
            opt.lr = base_lr * min(1.0, (it + 1) / config.warmup)
        y_b, u_b = next(windows)
        tape = Tape()
        bound = model.with_params({k: tape.leaf(k, v) for k, v in params.items()})
        roll = forward_pass(bound, y_b, u_b, config.algorithm,
                            strategy=config.strategy, n_samples=config.n_samples,
                            seed=int(np.random.SeedSequence(
                                entropy=config.seed, spawn_key=(1, it)).generate_state(1)[0]))
        terms = elbo(roll, bound, T_full, config.seq_len, config.beta)
        loss = -1.0 * terms.total
        loss_val = float(_val(loss))
        if not np.isfinite(loss_val):
            nan_strikes += 1
            detail = terms.detach()
            if nan_strikes > 1:
                raise RuntimeError(f"non-finite training loss; ELBO terms: {detail}")
            base_lr *= 0.5
            history.append(detail)
            continue
        tape.mark_output(loss)
        grads = gradient(tape)
        grads = _clip_gradients(grads, config.grad_clip)
        params = opt.step(params, grads)
        snap = terms.detach()
        history.append(snap)
        if callback is not None:
            callback(it, snap)
    return model.with_params(params), history


# --- prediction and evaluation ------------------------------------------------

def predict_open_loop(model: SSMModel, y_init: np.ndarray, u: np.ndarray,
                      n_samples: int = 100, seed: int = 0,
                      strategy: SamplingStrategy | str | None = None,
                      lag: int | None = None) -> list[Gaussian]:
    """Open-loop predictive distributions for ``y`` after the recognition lag.

    Recognizes the initial state from the first ``lag`` observations, rolls
    forward with *no* conditioning (test time has no measurements), and
    moment-matches the sample trajectories into one diagonal Gaussian per
    remaining step. Returns predictions for steps ``lag .. T-1``.
    """
    model = model.numeric()
    lag = lag if lag is not None else model.recognition.lag
    u = np.asarray(u, dtype=np.float64)
    y_init = np.asarray(y_init, dtype=np.float64)
    T = u.shape[0]
    if T <= lag:
        raise ValueError(f"horizon {T} must exceed recognition lag {lag}")
    strategy = SamplingStrategy.parse(strategy or SamplingStrategy.INDEPENDENT_PER_STEP)
    S = n_samples
    streams = rollout_streams(seed)
    frozen_f = model.forward_gp.freeze()
    state_f = make_strategy_state(frozen_f, strategy, S, streams["inducing_f"], S)

    feats = recognition_features(y_init[None, :lag], u[None, :lag], lag)
    mean_b, logvar_b = model.recognition.apply(feats)
    var_b = np.exp(logvar_b)
    x = mean_b + np.sqrt(var_b) * streams["x1"].standard_normal((S, model.d_x))
    noise_x = _val(model.noise_x())
    noise_y = _val(model.noise_y()).reshape(model.d_y)
    rng_f = streams["forward"]

    preds: list[Gaussian] = []
    d_y = model.d_y
    for t in range(T):
        if t >= lag:
            obs = x[:, :d_y]
            mean = obs.mean(axis=0)
            var = obs.var(axis=0) + noise_y
            preds.append(Gaussian(mean, var))
        if t == T - 1:
            break
        XU = np.concatenate([x, np.broadcast_to(u[t], (S, model.d_u))], axis=1)
        mean_f, var_f = state_f.frozen.predict(XU, state_f.mode, state_f.alpha_u)
        var_t = np.maximum(var_f + noise_x, 1e-12)
        x = mean_f + np.sqrt(var_t) * rng_f.standard_normal((S, model.d_x))
    return preds


def evaluate(predictions: list[Gaussian], y_true: np.ndarray) -> dict:
    """RMSE of mean predictions plus average per-step log-likelihood."""
    y_true = np.asarray(y_true, dtype=np.float64)
    if len(predictions) != y_true.shape[0]:
        raise ValueError(
            f"got {len(predictions)} predictions for {y_true.shape[0]} observations")
    if len(predictions) == 0:
        return {"rmse": float("nan"), "log_likelihood": float("nan")}
    means = np.stack([_val(p.mean) for p in predictions])
    varis = np.stack([_val(p.var_diag()) for p in predictions])
    err = means - y_true
    rmse = float(np.sqrt(np.mean(err**2)))
    ll = -0.5 * (err**2 / varis + np.log(varis) + _LOG_2PI)
    return {"rmse": rmse, "log_likelihood": float(ll.sum(axis=1).mean())}


def evaluate_on_dataset(model: SSMModel, dataset: Dataset, n_samples: int = 100,
                        seed: int = 0, lag: int | None = None,
                        horizon: int | None = None) -> dict:
    """Open-loop test metrics averaged over the test trajectories.

    RMSE is reported on the normalized scale (the training scale) and on
    the raw scale after inverting the normalization. ``horizon`` truncates
    each test trajectory (default: evaluate over its full length).
    """
    lag = lag if lag is not None else model.recognition.lag
    sq_norm = []
    sq_raw = []
    lls = []
    for i, traj in enumerate(dataset.test):
        T = traj.length if horizon is None else min(horizon, traj.length)
        preds = predict_open_loop(model, traj.y[:lag], traj.u[:T],
                                  n_samples=n_samples, seed=seed + 31 * i, lag=lag)
        y_tail = traj.y[lag:T]
        res = evaluate(preds, y_tail)
        lls.append(res["log_likelihood"])
        means = np.stack([p.mean for p in preds])
        sq_norm.append((means - y_tail) ** 2)
        raw_preds, raw_y = denormalize_predictions(dataset, means, y_tail)
        sq_raw.append((raw_preds - raw_y) ** 2)
    rmse_norm = float(np.sqrt(np.mean(np.concatenate(sq_norm, axis=0))))
    rmse_raw = float(np.sqrt(np.mean(np.concatenate(sq_raw, axis=0))))
    return {
        "rmse": rmse_norm,
        "rmse_raw": rmse_raw,
        "log_likelihood": float(np.mean(lls)),
    }
