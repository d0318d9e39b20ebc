"""Variational inference for Gaussian process state-space models.

Implements three approximate posteriors over latent trajectories (PRSSM,
VCDT, CBFSSM) on top of sparse inducing-point GP transitions, including the
reverse-time smoothing pass and the soft Kalman conditioning step, plus
linear-Gaussian oracles, simulators and dataset tooling.
"""

from .autodiff import Tape, Var, cholesky_solve, evaluate, fd_check, gradient
from .data import (
    Dataset,
    DubinsParams,
    Trajectory,
    load_csv,
    mss_check,
    save_csv,
    simulate_dubins,
    simulate_linear,
    subsequences,
)
from .gp import Gaussian, SparseGP, gaussian_kl, gp_posterior, sparse_predict
from .inference import (
    ELBOTerms,
    Rollout,
    TrainConfig,
    backward_pass,
    elbo,
    evaluate_on_dataset,
    forward_pass,
    init_model,
    predict_open_loop,
    train,
)
from .inference import evaluate as evaluate_predictions
from .kalman import kalman_filter_smoother, kalman_open_loop, kalman_update
from .kernels import Kernel, kernel_matrix
from .ssm import (
    LinearTransition,
    RecognitionModule,
    SamplingStrategy,
    SSMModel,
    backward_step,
    forward_prior,
    observe,
    recognize,
    soft_condition,
)

__all__ = [
    "Tape", "Var", "cholesky_solve", "evaluate", "fd_check", "gradient",
    "Dataset", "DubinsParams", "Trajectory", "load_csv", "mss_check",
    "save_csv", "simulate_dubins", "simulate_linear", "subsequences",
    "Gaussian", "SparseGP", "gaussian_kl", "gp_posterior", "sparse_predict",
    "ELBOTerms", "Rollout", "TrainConfig", "backward_pass", "elbo",
    "evaluate_on_dataset", "evaluate_predictions", "forward_pass",
    "init_model", "predict_open_loop", "train",
    "kalman_filter_smoother", "kalman_open_loop", "kalman_update",
    "Kernel", "kernel_matrix",
    "LinearTransition", "RecognitionModule", "SamplingStrategy", "SSMModel",
    "backward_step", "forward_prior", "observe", "recognize", "soft_condition",
]

__version__ = "0.1.0"
