"""Posterior sampling with a diffusion prior.

Three samplers share one noise layout so that they can be compared on
paired random streams: each draw consumes a (T + 1, d) block of standard
normals, ``z[T]`` for the initial ``S_T`` and ``z[t - 1]`` for the draw of
``S_{t-1}`` at stage ``t`` (see :func:`laplace_dps.diffusion.prior_chain`).

* :func:`laplace_dps_linear` -- every stage conditional is the product of
  the reverse-process Gaussian and the evidence Gaussian rescaled to that
  stage.
* :func:`laplace_dps_glm` -- the same chain with each product replaced by
  an IRLS Laplace approximation.
* :func:`dps_baseline` -- the score-guided sampler that nudges the
  unconditional chain by the gradient of the residual sum of squares.

The ``*_batch`` variants run R independent chains in lockstep, one per
replicate history, and are what the bandit simulator uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .bayes import EvidenceSummary, History, summarize
from .diffusion import DiffusionModel, draw_chain_noise, prior_chain, reverse_mean
from .glm import MeanFunction, irls_batch
from .linalg import Singular, cholesky, spd_inverse, spd_solve
from .mlp import input_vjp

__all__ = [
    "NonFinite",
    "ConditionalGaussianStage",
    "linear_stage",
    "laplace_dps_linear",
    "laplace_dps_linear_batch",
    "laplace_dps_glm",
    "laplace_dps_glm_batch",
    "dps_baseline",
    "dps_baseline_batch",
    "dps_residual_grad",
]

ZETA_GUARD = 1e-12


class NonFinite(FloatingPointError):
    """A sampler iterate left the finite range."""


@dataclass(frozen=True)
class ConditionalGaussianStage:
    """Approximate ``p(s_{t-1} | s_t, h)``; ``stage == T + 1`` is ``p(s_T | h)``."""

    stage: int
    mean: NDArray[np.float64]
    covariance: NDArray[np.float64]


def linear_stage(model: DiffusionModel, ev: EvidenceSummary, t: int,
                 s_t: ArrayLike | None = None) -> ConditionalGaussianStage:
    """One stage conditional of the linear chain, computed directly.

    For ``t == T + 1`` the prior is N(0, I) and ``s_t`` is ignored. Stage 1
    has zero prior covariance and returns the reverse mean with a zero
    covariance. This is the reference path; the batched sampler uses a
    shared eigendecomposition instead.
    """
    sched = model.schedule
    d = model.dim
    if t == sched.T + 1:
        ab, prior_mean, prior_var = sched.alpha_bar[sched.T], np.zeros(d), 1.0
    else:
        sched.check_stage(t)
        prior_mean, _ = reverse_mean(model, t, s_t)
        ab, prior_var = sched.alpha_bar[t - 1], sched.beta_tilde[t - 1]
    if prior_var == 0.0:
        return ConditionalGaussianStage(t, prior_mean, np.zeros((d, d)))
    precision = np.eye(d) / prior_var + ev.precision / ab
    mean = spd_solve(precision, prior_mean / prior_var + ev.weighted_sum / math.sqrt(ab))
    return ConditionalGaussianStage(t, mean, spd_inverse(precision))


def _batched_cholesky(cov: NDArray) -> NDArray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        try:
            return np.stack([cholesky(c) for c in cov])
        except np.linalg.LinAlgError as exc:
            raise Singular("stage covariance failed Cholesky after jitter") from exc


def _draw(mean: NDArray, cov: NDArray, z: NDArray) -> NDArray:
    return mean + np.einsum("rij,rj->ri", _batched_cholesky(cov), z)


def laplace_dps_linear_batch(model: DiffusionModel, precision: NDArray,
                             weighted_sum: NDArray, noise: NDArray,
                             record_means: bool = False):
    """Linear-evidence chains for R replicates.

    Parameters
    ----------
    precision : (R, d, d) evidence precisions ``sigma^-2 sum phi phi^T``.
    weighted_sum : (R, d) ``sigma^-2 sum phi y``.
    noise : (R, T + 1, d) standard normals.
    record_means : also return the (R, T + 1, d) stage means, ordered from
        the initial ``S_T`` draw (index 0) down to stage 1 (index T).
    """
    sched = model.schedule
    T = sched.T
    precision = np.asarray(precision, dtype=float)
    b = np.asarray(weighted_sum, dtype=float)
    if not (np.any(precision) or np.any(b)) and not record_means:
        return prior_chain(model, noise)
    lam, q = np.linalg.eigh(0.5 * (precision + np.swapaxes(precision, -1, -2)))
    lam = np.maximum(lam, 0.0)
    qt = np.swapaxes(q, -1, -2)
    means = []

    def stage_cov(prior_var, ab):
        c = prior_var * ab / (ab + prior_var * lam)
        return (q * c[:, None, :]) @ qt

    cov = stage_cov(1.0, sched.alpha_bar[T])
    mean = np.einsum("rij,rj->ri", cov, b / math.sqrt(sched.alpha_bar[T]))
    means.append(mean)
    s = _draw(mean, cov, noise[:, T])
    for t in range(T, 0, -1):
        mu, _ = reverse_mean(model, t, s)
        var = sched.beta_tilde[t - 1]
        if var == 0.0:
            # zero reverse noise: the conditional collapses onto the prior mean
            s = mu
            means.append(mu)
            continue
        ab = sched.alpha_bar[t - 1]
        cov = stage_cov(var, ab)
        mean = np.einsum("rij,rj->ri", cov, mu / var + b / math.sqrt(ab))
        means.append(mean)
        s = _draw(mean, cov, noise[:, t - 1])
    if record_means:
        return s, np.stack(means, axis=1)
    return s


def laplace_dps_linear(model: DiffusionModel, h: History,
                       rng: np.random.Generator) -> NDArray:
    """One posterior draw for linear-Gaussian evidence ``h``."""
    if h.dim != model.dim:
        raise ValueError(f"history dimension {h.dim} != model dimension {model.dim}")
    ev = summarize(h)
    noise = draw_chain_noise(rng, model.T, model.dim)[None]
    return laplace_dps_linear_batch(model, ev.precision[None], ev.weighted_sum[None],
                                    noise)[0]


def laplace_dps_glm_batch(model: DiffusionModel, features: NDArray,
                          observations: NDArray, mf: MeanFunction,
                          noise: NDArray) -> NDArray:
    """GLM-evidence chains; ``features`` (R, N, d), ``observations`` (R, N)."""
    sched = model.schedule
    T, d = sched.T, model.dim
    phi = np.asarray(features, dtype=float)
    y = np.asarray(observations, dtype=float)
    r = phi.shape[0]
    if phi.shape[1] == 0:
        return prior_chain(model, noise)
    eye = np.broadcast_to(np.eye(d), (r, d, d))
    ab = sched.alpha_bar[T]
    theta, sig = irls_batch(np.zeros((r, d)), ab * eye, phi, y, mf)
    s = _draw(math.sqrt(ab) * theta, ab * sig, noise[:, T])
    for t in range(T, 0, -1):
        mu, _ = reverse_mean(model, t, s)
        var = sched.beta_tilde[t - 1]
        if var == 0.0:
            s = mu
            continue
        ab = sched.alpha_bar[t - 1]
        gamma = 1.0 / math.sqrt(ab)
        theta, sig = irls_batch(gamma * mu, (ab / var) * eye, phi, y, mf)
        s = _draw(theta / gamma, ab * sig, noise[:, t - 1])
    return s


def laplace_dps_glm(model: DiffusionModel, h: History, mf: MeanFunction,
                    rng: np.random.Generator) -> NDArray:
    """One posterior draw for GLM evidence; the noise scale of ``h`` is unused."""
    if h.dim != model.dim:
        raise ValueError(f"history dimension {h.dim} != model dimension {model.dim}")
    noise = draw_chain_noise(rng, model.T, model.dim)[None]
    return laplace_dps_glm_batch(model, h.features[None], h.observations[None], mf,
                                 noise)[0]


def dps_residual_grad(model: DiffusionModel, t: int, s_t: NDArray, gram: NDArray,
                      xty: NDArray, yty: NDArray) -> tuple[NDArray, NDArray]:
    """Residual sum of squares at the clean estimate and its gradient in ``s_t``.

    The residual ``sum (y - phi^T s0_hat)^2`` is evaluated from the raw
    statistics ``gram = Phi^T Phi``, ``xty = Phi^T y``, ``yty = y^T y``;
    the gradient is backpropagated through the stage regressor.
    All arguments carry a leading replicate axis.
    """
    sched = model.schedule
    ab = sched.alpha_bar[t]
    _, s0_hat = reverse_mean(model, t, s_t)
    g_s0 = np.einsum("rij,rj->ri", gram, s0_hat)
    rss = yty - 2.0 * np.einsum("ri,ri->r", s0_hat, xty) + np.einsum("ri,ri->r", s0_hat, g_s0)
    grad_s0 = -2.0 * (xty - g_s0)
    grad = (grad_s0 - math.sqrt(1.0 - ab) * input_vjp(model.regressor(t), s_t, grad_s0))
    return np.maximum(rss, 0.0), grad / math.sqrt(ab)


def dps_baseline_batch(model: DiffusionModel, gram: NDArray, xty: NDArray,
                       yty: NDArray, noise: NDArray) -> tuple[NDArray, NDArray]:
    """Score-guided chains; returns ``(samples, finite_mask)``.

    Replicates whose iterate or residual becomes non-finite are frozen at
    NaN and flagged False in the mask; the remaining chains continue.
    """
    sched = model.schedule
    s = noise[:, sched.T].copy()
    ok = np.ones(s.shape[0], dtype=bool)
    gram = np.asarray(gram, dtype=float)
    xty = np.asarray(xty, dtype=float)
    yty = np.asarray(yty, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(sched.T, 0, -1):
            mu, _ = reverse_mean(model, t, s)
            nxt = mu + math.sqrt(sched.beta_tilde[t - 1]) * noise[:, t - 1]
            rss, grad = dps_residual_grad(model, t, s, gram, xty, yty)
            guided = rss >= ZETA_GUARD
            zeta = np.where(guided, 1.0 / np.sqrt(np.where(guided, rss, 1.0)), 0.0)
            s = nxt - np.where(guided[:, None], zeta[:, None] * grad, 0.0)
            bad = ~(np.all(np.isfinite(s), axis=1) & np.isfinite(rss))
            if np.any(bad):
                ok &= ~bad
                s[bad] = np.nan
    return s, ok


def dps_baseline(model: DiffusionModel, h: History, rng: np.random.Generator) -> NDArray:
    """One score-guided draw; raises :class:`NonFinite` on divergence."""
    if h.dim != model.dim:
        raise ValueError(f"history dimension {h.dim} != model dimension {model.dim}")
    phi, y = h.features, h.observations
    noise = draw_chain_noise(rng, model.T, model.dim)[None]
    s, ok = dps_baseline_batch(model, (phi.T @ phi)[None], (phi.T @ y)[None],
                               np.array([y @ y]), noise)
    if not ok[0]:
        raise NonFinite("DPS iterate left the finite range")
    return s[0]
