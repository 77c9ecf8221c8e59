"""Generators for the true prior of the model parameter.

The synthetic shapes beyond the two-Gaussian mixture are artifact choices:
``cross`` is two elongated axis-aligned Gaussians sharing a center, and
``clustered`` is a mixture of tight isotropic clusters with random centers,
standing in for classifier-derived parameter clouds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .diffusion import load_samples

__all__ = ["PriorGenerator", "GENERATOR_KINDS"]

GENERATOR_KINDS = ("two_gaussian_mixture", "cross", "clustered", "gaussian", "file")


@dataclass(frozen=True)
class PriorGenerator:
    """Sampler for one prior family.

    Shape parameters (all optional) per kind:

    two_gaussian_mixture
        ``d`` (2), ``offset`` (3.0): modes at ``+-offset * e_1``; ``scale``
        (1.0) is the per-mode standard deviation; ``weight`` (0.5) of the
        positive mode.
    cross
        ``d`` (2), ``long`` (3.0), ``short`` (0.25): two zero-mean Gaussians
        with standard deviations ``(long, short)`` and ``(short, long)`` on
        the first two axes, ``short`` on any others.
    clustered
        ``d`` (8), ``clusters`` (10), ``spread`` (2.0) for cluster centers,
        ``scale`` (0.3) within clusters, ``center_seed`` (0).
    gaussian
        ``mean`` (zeros), ``cov`` (identity) or ``d`` with ``scale``.
    file
        ``path`` to a delimiter-separated sample file; draws are rows
        sampled uniformly with replacement.
    """

    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"unknown prior kind {self.kind!r}; choose from {GENERATOR_KINDS}")

    @property
    def dim(self) -> int:
        p = self.params
        if self.kind == "gaussian" and "mean" in p:
            return len(p["mean"])
        if self.kind == "file":
            return self._file_rows().shape[1]
        return int(p.get("d", 8 if self.kind == "clustered" else 2))

    def _file_rows(self) -> NDArray:
        path = Path(self.params["path"])
        if not path.exists():
            raise FileNotFoundError(f"prior sample file {path} not found")
        return load_samples(path, self.params.get("delimiter", ","))

    def cluster_centers(self) -> NDArray:
        p = self.params
        rng = np.random.default_rng(int(p.get("center_seed", 0)))
        return float(p.get("spread", 2.0)) * rng.standard_normal(
            (int(p.get("clusters", 10)), self.dim))

    def sample(self, n: int, rng: np.random.Generator) -> NDArray:
        """Draw ``n`` samples of shape (n, d)."""
        p, d = self.params, self.dim
        if self.kind == "two_gaussian_mixture":
            offset = float(p.get("offset", 3.0))
            sign = np.where(rng.random(n) < float(p.get("weight", 0.5)), 1.0, -1.0)
            out = float(p.get("scale", 1.0)) * rng.standard_normal((n, d))
            out[:, 0] += offset * sign
            return out
        if self.kind == "cross":
            long_, short = float(p.get("long", 3.0)), float(p.get("short", 0.25))
            arm = rng.random(n) < 0.5
            std = np.full((n, d), short)
            std[arm, 0] = long_
            std[~arm, 1] = long_
            return std * rng.standard_normal((n, d))
        if self.kind == "clustered":
            centers = self.cluster_centers()
            which = rng.integers(0, centers.shape[0], size=n)
            return centers[which] + float(p.get("scale", 0.3)) * rng.standard_normal((n, d))
        if self.kind == "gaussian":
            mean = np.asarray(p.get("mean", np.zeros(d)), dtype=float)
            if "cov" in p:
                cov = np.asarray(p["cov"], dtype=float)
            else:
                cov = float(p.get("scale", 1.0)) ** 2 * np.eye(d)
            return rng.multivariate_normal(mean, cov, size=n, method="cholesky")
        rows = self._file_rows()
        return rows[rng.integers(0, rows.shape[0], size=n)]
