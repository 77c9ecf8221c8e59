"""Conjugate posterior for the linear-Gaussian observation model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .linalg import GaussianBelief, spd_inverse, spd_solve

__all__ = ["History", "EvidenceSummary", "summarize", "linear_posterior"]


@dataclass(frozen=True)
class History:
    """Ordered observations ``(phi_l, y_l)`` with noise scale ``sigma``.

    ``features`` has shape (N, d) and ``observations`` shape (N,). An empty
    history still carries its dimension through ``features.shape[1]``.
    """

    features: NDArray[np.float64]
    observations: NDArray[np.float64]
    noise_scale: float = 1.0

    def __post_init__(self):
        phi = np.array(self.features, dtype=float)
        y = np.array(self.observations, dtype=float).reshape(-1)
        if phi.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {phi.shape}")
        if phi.shape[0] != y.size:
            raise ValueError(f"{phi.shape[0]} feature rows but {y.size} observations")
        if not self.noise_scale > 0:
            raise ValueError("noise_scale must be positive")
        phi.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", phi)
        object.__setattr__(self, "observations", y)
        object.__setattr__(self, "noise_scale", float(self.noise_scale))

    @classmethod
    def empty(cls, d: int, noise_scale: float = 1.0) -> "History":
        return cls(np.zeros((0, d)), np.zeros(0), noise_scale)

    @classmethod
    def from_records(cls, records: Iterable[tuple[ArrayLike, float]], d: int,
                     noise_scale: float = 1.0) -> "History":
        records = list(records)
        if not records:
            return cls.empty(d, noise_scale)
        phi = np.array([np.asarray(r[0], dtype=float) for r in records])
        y = np.array([float(r[1]) for r in records])
        return cls(phi, y, noise_scale)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.observations.size

    def append(self, phi: ArrayLike, y: float) -> "History":
        phi = np.asarray(phi, dtype=float).reshape(1, -1)
        return History(np.vstack([self.features, phi]),
                       np.append(self.observations, float(y)), self.noise_scale)


@dataclass(frozen=True)
class EvidenceSummary:
    """Least-squares statistics of a history.

    precision = sigma^-2 sum phi phi^T, weighted_sum = sigma^-2 sum phi y.
    The evidence mean is never formed; ``precision @ mean == weighted_sum``.
    """

    precision: NDArray[np.float64]
    weighted_sum: NDArray[np.float64]

    def add(self, phi: ArrayLike, y: float, noise_scale: float) -> "EvidenceSummary":
        phi = np.asarray(phi, dtype=float)
        w = noise_scale ** -2
        return EvidenceSummary(self.precision + w * np.outer(phi, phi),
                               self.weighted_sum + w * y * phi)


def summarize(h: History) -> EvidenceSummary:
    w = h.noise_scale ** -2
    phi = h.features
    return EvidenceSummary(w * (phi.T @ phi), w * (phi.T @ h.observations))


def linear_posterior(prior: GaussianBelief, h: History) -> GaussianBelief:
    """Exact posterior of a Gaussian prior under linear-Gaussian evidence.

    Posterior precision is the prior precision plus the evidence precision.
    An empty history returns ``prior`` itself.
    """
    if h.dim != prior.dim:
        raise ValueError(f"history dimension {h.dim} != prior dimension {prior.dim}")
    if len(h) == 0:
        return prior
    ev = summarize(h)
    prior_precision = spd_inverse(prior.covariance)
    precision = prior_precision + ev.precision
    mean = spd_solve(precision, prior_precision @ prior.mean + ev.weighted_sum)
    return GaussianBelief(mean, spd_inverse(precision))
