"""Posterior sampling with diffusion-model priors for linear and GLM bandits."""

from .bayes import EvidenceSummary, History, linear_posterior, summarize
from .diffusion import (BadParam, DiffusionModel, DiffusionSchedule, forward_marginal_sample,
                        load_model, make_schedule, reverse_mean, sample_prior, save_model,
                        train_prior)
from .glm import IDENTITY, LOGISTIC, MeanFunction, NoConvergence, irls
from .linalg import (GaussianBelief, NotPsd, Singular, cholesky, gaussian_kl, gaussian_product,
                     gaussian_sample)
from .mlp import Mlp, TrainConfig
from .samplers import NonFinite, dps_baseline, laplace_dps_glm, laplace_dps_linear

__version__ = "0.1.0"

__all__ = [
    "BadParam", "DiffusionModel", "DiffusionSchedule", "EvidenceSummary", "GaussianBelief",
    "History", "IDENTITY", "LOGISTIC", "MeanFunction", "Mlp", "NoConvergence", "NonFinite",
    "NotPsd", "Singular", "TrainConfig", "cholesky", "dps_baseline", "forward_marginal_sample",
    "gaussian_kl", "gaussian_product", "gaussian_sample", "irls", "laplace_dps_glm",
    "laplace_dps_linear", "linear_posterior", "load_model", "make_schedule", "reverse_mean",
    "sample_prior", "save_model", "summarize", "train_prior",
]
