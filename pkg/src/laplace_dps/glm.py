"""Generalized linear models and their Laplace approximation via IRLS."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

from .bayes import History
from .linalg import GaussianBelief, spd_inverse

__all__ = [
    "MeanFunction",
    "IDENTITY",
    "LOGISTIC",
    "mean_function",
    "NoConvergence",
    "irls",
    "irls_batch",
    "log_posterior",
]

GDOT_FLOOR = 1e-6
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100


class NoConvergence(RuntimeError):
    """IRLS did not reach the iterate tolerance within the iteration budget."""


@dataclass(frozen=True)
class MeanFunction:
    """Mean function ``g`` with derivative ``g_dot`` and log-partition ``b``.

    ``b`` satisfies ``b' = g`` and only enters the log-posterior diagnostic.
    """

    kind: str
    g: Callable[[NDArray], NDArray]
    g_dot: Callable[[NDArray], NDArray]
    b: Callable[[NDArray], NDArray]


def _logistic_dot(u):
    p = expit(u)
    return p * (1.0 - p)


IDENTITY = MeanFunction(
    "identity",
    g=lambda u: np.asarray(u, dtype=float),
    g_dot=lambda u: np.ones_like(np.asarray(u, dtype=float)),
    b=lambda u: 0.5 * np.square(u),
)
LOGISTIC = MeanFunction(
    "logistic",
    g=expit,
    g_dot=_logistic_dot,
    b=lambda u: np.logaddexp(0.0, u),
)


def mean_function(kind: str) -> MeanFunction:
    try:
        return {"identity": IDENTITY, "linear": IDENTITY, "logistic": LOGISTIC}[kind]
    except KeyError:
        raise ValueError(f"unknown mean function {kind!r}") from None


def log_posterior(theta: ArrayLike, theta0: ArrayLike, sigma0: ArrayLike,
                  h: History, mf: MeanFunction) -> float:
    """Unnormalized log-posterior ``sum y u - b(u)`` plus the Gaussian prior term."""
    theta = np.asarray(theta, dtype=float)
    diff = theta - np.asarray(theta0, dtype=float)
    prior = -0.5 * diff @ np.linalg.solve(np.asarray(sigma0, dtype=float), diff)
    u = h.features @ theta
    return float(prior + np.sum(h.observations * u - mf.b(u)))


def irls_batch(theta0: NDArray, prior_precision: NDArray, features: NDArray,
               observations: NDArray, mf: MeanFunction, *, tol: float = IRLS_TOL,
               max_iter: int = IRLS_MAX_ITER) -> tuple[NDArray, NDArray]:
    """IRLS over a leading batch axis.

    Parameters
    ----------
    theta0 : (R, d) prior means.
    prior_precision : (R, d, d) prior precisions.
    features : (R, N, d) per-replicate feature rows.
    observations : (R, N) per-replicate observations.

    Returns
    -------
    (theta_hat, sigma_hat) with shapes (R, d) and (R, d, d).
    """
    theta0 = np.asarray(theta0, dtype=float)
    prior_precision = np.asarray(prior_precision, dtype=float)
    phi = np.asarray(features, dtype=float)
    y = np.asarray(observations, dtype=float)
    prior_lin = np.einsum("rij,rj->ri", prior_precision, theta0)
    theta = theta0.copy()
    if phi.shape[1] == 0:
        return theta, np.linalg.inv(prior_precision)
    for _ in range(max_iter):
        u = np.einsum("rnd,rd->rn", phi, theta)
        gd = mf.g_dot(u)
        z = u + (y - mf.g(u)) / np.maximum(gd, GDOT_FLOOR)
        precision = prior_precision + np.einsum("rn,rni,rnj->rij", gd, phi, phi)
        rhs = prior_lin + np.einsum("rn,rni->ri", gd * z, phi)
        new = np.linalg.solve(precision, rhs[..., None])[..., 0]
        if not np.all(np.isfinite(new)):
            raise NoConvergence("IRLS iterate became non-finite")
        change = np.max(np.abs(new - theta))
        theta = new
        if change <= tol:
            break
    else:
        raise NoConvergence(f"IRLS change {change:.3g} > {tol} after {max_iter} iterations")
    # covariance at the converged iterate
    u = np.einsum("rnd,rd->rn", phi, theta)
    precision = prior_precision + np.einsum("rn,rni,rnj->rij", mf.g_dot(u), phi, phi)
    cov = np.linalg.inv(precision)
    return theta, 0.5 * (cov + np.swapaxes(cov, -1, -2))


def irls(theta0: ArrayLike, sigma0: ArrayLike, h: History,
         mf: MeanFunction) -> GaussianBelief:
    """Laplace approximation of a GLM posterior under a Gaussian prior.

    Iteration starts at the prior mean and stops once the sup-norm change
    of the iterate is at most 1e-8 (100 iterations max). The noise scale of
    ``h`` is not used: weights are ``g_dot`` alone.
    """
    theta0 = np.asarray(theta0, dtype=float).reshape(-1)
    sigma0 = np.asarray(sigma0, dtype=float)
    if h.dim != theta0.size:
        raise ValueError(f"history dimension {h.dim} != prior dimension {theta0.size}")
    if len(h) == 0:
        return GaussianBelief(theta0, sigma0)
    prior_precision = spd_inverse(sigma0)
    theta, cov = irls_batch(theta0[None], prior_precision[None], h.features[None],
                            h.observations[None], mf)
    return GaussianBelief(theta[0], cov[0])
