"""Streaming Bayesian imputation of multivariate time series.

Series are modelled as a channel-weight matrix times a small set of
latent trend/seasonal factor functions under Gaussian-process priors.
The priors are handled in their exact state-space form, so inference is
a single forward pass of closed-form message updates plus a backward
smoothing sweep, and predictions are available at arbitrary timestamps
inside the observed span.
"""

from .kernels import (
    FactorSSM,
    KernelSpec,
    Matern,
    Periodic,
    Transition,
    bessel_i,
    build_ssm,
    kernel_eval,
    transition,
)
from .gaussians import (
    GammaParams,
    GaussianMoment,
    GaussianNatural,
    JointState,
    divide,
    gamma_merge,
    gamma_unmerge,
    multiply,
    project_marginal,
    to_moment,
    to_natural,
)
from .data import SeriesData, SplitSpec, apply_split, load_csv, save_csv, synth_generate
from .engine import (
    ModelConfig,
    ModelPosterior,
    ObservationBatch,
    compute_messages,
    init,
    predict_state,
    run_offline,
    smooth,
    step,
)
from .predictor import PredictiveDist, interpolate_state, predict, sample
from .metrics import EvalReport, crps_sample, mae, nllk, rmse

__version__ = "0.1.0"

__all__ = [
    "FactorSSM",
    "KernelSpec",
    "Matern",
    "Periodic",
    "Transition",
    "bessel_i",
    "build_ssm",
    "kernel_eval",
    "transition",
    "GammaParams",
    "GaussianMoment",
    "GaussianNatural",
    "JointState",
    "divide",
    "gamma_merge",
    "gamma_unmerge",
    "multiply",
    "project_marginal",
    "to_moment",
    "to_natural",
    "SeriesData",
    "SplitSpec",
    "apply_split",
    "load_csv",
    "save_csv",
    "synth_generate",
    "ModelConfig",
    "ModelPosterior",
    "ObservationBatch",
    "compute_messages",
    "init",
    "predict_state",
    "run_offline",
    "smooth",
    "step",
    "PredictiveDist",
    "interpolate_state",
    "predict",
    "sample",
    "EvalReport",
    "crps_sample",
    "mae",
    "nllk",
    "rmse",
    "__version__",
]
