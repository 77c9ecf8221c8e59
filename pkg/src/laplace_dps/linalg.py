"""Small dense linear algebra and multivariate Gaussian algebra.

Everything here works on plain numpy arrays of modest dimension (d <= 32).
Inverses are taken through Cholesky solves; the only place an explicit
precision matrix is materialized is the evidence summary in
:mod:`laplace_dps.bayes`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg as sla

__all__ = [
    "NotPsd",
    "Singular",
    "GaussianBelief",
    "cholesky",
    "spd_solve",
    "spd_inverse",
    "gaussian_sample",
    "gaussian_product",
    "gaussian_kl",
]

JITTER_START = 1e-12
JITTER_MAX = 1e-6


class NotPsd(np.linalg.LinAlgError):
    """Raised when a matrix cannot be Cholesky factored even after jitter."""


class Singular(np.linalg.LinAlgError):
    """Raised when a covariance that must be inverted is not invertible."""


@dataclass(frozen=True)
class GaussianBelief:
    """Multivariate normal N(mean, covariance).

    Arrays are copied and made read-only on construction.
    """

    mean: NDArray[np.float64]
    covariance: NDArray[np.float64]

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.covariance, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(
                f"mean has dimension {mean.size} but covariance has shape {cov.shape}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("GaussianBelief entries must be finite")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def standard(cls, d: int) -> "GaussianBelief":
        return cls(np.zeros(d), np.eye(d))


def cholesky(m: ArrayLike) -> NDArray[np.float64]:
    """Lower Cholesky factor of a symmetric PSD matrix.

    On failure a diagonal jitter of ``1e-12 * tr(M) / d`` is added and
    escalated by factors of ten up to ``1e-6 * tr(M) / d``.

    Raises
    ------
    NotPsd
        If the factorization still fails at the largest jitter.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    d = m.shape[0]
    if not np.all(np.isfinite(m)):
        raise NotPsd("matrix has non-finite entries")
    try:
        return sla.cholesky(m, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    scale = np.trace(m) / d
    if scale <= 0.0:
        # all-zero (or negative-trace) input; jitter relative to unit scale
        scale = 1.0 if np.allclose(m, 0.0) else abs(scale)
    jitter = JITTER_START
    eye = np.eye(d)
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return sla.cholesky(m + jitter * scale * eye, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NotPsd("Cholesky factorization failed after maximum jitter")


def _factor_invertible(m: NDArray) -> tuple[NDArray, bool]:
    try:
        return sla.cho_factor(m, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise Singular("matrix is not positive definite") from exc


def spd_solve(m: ArrayLike, rhs: ArrayLike) -> NDArray[np.float64]:
    """Solve ``M x = rhs`` for symmetric positive definite ``M``."""
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise Singular("matrix has non-finite entries")
    return sla.cho_solve(_factor_invertible(m), np.asarray(rhs, dtype=float),
                         check_finite=False)


def spd_inverse(m: ArrayLike) -> NDArray[np.float64]:
    """Explicit inverse of an SPD matrix, symmetrized."""
    m = np.asarray(m, dtype=float)
    inv = spd_solve(m, np.eye(m.shape[0]))
    return 0.5 * (inv + inv.T)


def gaussian_sample(g: GaussianBelief, rng: np.random.Generator,
                    size: int | None = None) -> NDArray[np.float64]:
    """Draw ``mean + L z`` with ``z`` standard normal.

    A zero covariance returns the mean exactly. With ``size`` given the
    result has shape ``(size, d)``.
    """
    if not np.any(g.covariance):
        z_shape = (g.dim,) if size is None else (size, g.dim)
        rng.standard_normal(z_shape)  # keep stream consumption shape-stable
        return np.broadcast_to(g.mean, z_shape).copy()
    chol = cholesky(g.covariance)
    if size is None:
        return g.mean + chol @ rng.standard_normal(g.dim)
    return g.mean + rng.standard_normal((size, g.dim)) @ chol.T


def gaussian_product(g1: GaussianBelief, g2: GaussianBelief) -> GaussianBelief:
    """Normalized pointwise product of two Gaussian densities.

    The result has precision ``P1 + P2`` and mean
    ``(P1 + P2)^-1 (P1 mu1 + P2 mu2)``.
    """
    if g1.dim != g2.dim:
        raise ValueError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    p1 = spd_inverse(g1.covariance)
    p2 = spd_inverse(g2.covariance)
    precision = p1 + p2
    mean = spd_solve(precision, p1 @ g1.mean + p2 @ g2.mean)
    return GaussianBelief(mean, spd_inverse(precision))


def gaussian_kl(p: GaussianBelief, q: GaussianBelief) -> float:
    """KL(p || q) between two multivariate normals."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    cq = _factor_invertible(np.asarray(q.covariance))
    diff = q.mean - p.mean
    maha = diff @ sla.cho_solve(cq, diff, check_finite=False)
    trace = np.trace(sla.cho_solve(cq, p.covariance, check_finite=False))
    _, logdet_p = np.linalg.slogdet(p.covariance)
    logdet_q = 2.0 * np.sum(np.log(np.diag(cq[0])))
    kl = 0.5 * (maha + trace - (logdet_p - logdet_q) - p.dim)
    return max(float(kl), 0.0)
