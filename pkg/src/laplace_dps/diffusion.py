"""Diffusion prior: schedule, forward noising, per-stage training, reverse sampling.

Stage indices follow the usual 1-based convention. ``alpha``, ``beta`` and
``beta_tilde`` are length-T arrays where entry ``t - 1`` belongs to stage
``t``; ``alpha_bar`` has length T + 1 with ``alpha_bar[0] == 1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .mlp import Mlp, TrainConfig, grad_step, init_mlp

__all__ = [
    "BadParam",
    "DiffusionSchedule",
    "DiffusionModel",
    "make_schedule",
    "forward_marginal_sample",
    "train_prior",
    "reverse_mean",
    "sample_prior",
    "prior_chain",
    "save_model",
    "load_model",
    "load_samples",
    "save_samples",
    "MODEL_FORMAT_VERSION",
]

MODEL_FORMAT_VERSION = 1
DEFAULT_HIDDEN = 64


class BadParam(ValueError):
    """Out-of-range schedule or stage parameter."""


@dataclass(frozen=True)
class DiffusionSchedule:
    alpha: NDArray[np.float64]
    beta: NDArray[np.float64] = field(init=False)
    alpha_bar: NDArray[np.float64] = field(init=False)
    beta_tilde: NDArray[np.float64] = field(init=False)

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float).reshape(-1)
        if alpha.size < 1:
            raise BadParam("schedule needs at least one stage")
        if not np.all((alpha > 0) & (alpha < 1)):
            raise BadParam("every alpha_t must lie in (0, 1)")
        beta = 1.0 - alpha
        alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
        beta_tilde = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta
        for name, arr in (("alpha", alpha), ("beta", beta), ("alpha_bar", alpha_bar),
                          ("beta_tilde", beta_tilde)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return self.alpha.size

    def check_stage(self, t: int, *, allow_zero: bool = False) -> None:
        lo = 0 if allow_zero else 1
        if not (lo <= t <= self.T):
            raise BadParam(f"stage {t} outside [{lo}, {self.T}]")

    def posterior_coefficients(self, t: int) -> tuple[float, float]:
        """Weights of (s0, s_t) in the mean of q(s_{t-1} | s_t, s0)."""
        ab_prev, ab = self.alpha_bar[t - 1], self.alpha_bar[t]
        c0 = math.sqrt(ab_prev) * self.beta[t - 1] / (1.0 - ab)
        ct = math.sqrt(self.alpha[t - 1]) * (1.0 - ab_prev) / (1.0 - ab)
        return c0, ct


def make_schedule(T: int, alpha_const: float) -> DiffusionSchedule:
    """Constant-rate schedule ``alpha_t = alpha_const`` for ``t = 1..T``."""
    if int(T) != T or T < 1:
        raise BadParam(f"T must be a positive integer, got {T}")
    if not 0.0 < alpha_const < 1.0:
        raise BadParam(f"alpha must lie in (0, 1), got {alpha_const}")
    return DiffusionSchedule(np.full(int(T), float(alpha_const)))


def forward_marginal_sample(s0: ArrayLike, t: int, sched: DiffusionSchedule,
                            rng: np.random.Generator) -> tuple[NDArray, NDArray]:
    """Draw ``s_t ~ q(s_t | s0)``; returns ``(s_t, eps)`` with the noise used."""
    sched.check_stage(t, allow_zero=True)
    s0 = np.asarray(s0, dtype=float)
    eps = rng.standard_normal(s0.shape)
    ab = sched.alpha_bar[t]
    return math.sqrt(ab) * s0 + math.sqrt(1.0 - ab) * eps, eps


@dataclass
class DiffusionModel:
    """Schedule plus one noise regressor per stage (stacked on axis 0)."""

    schedule: DiffusionSchedule
    regressors: Mlp
    train_loss: NDArray[np.float64] | None = None

    def __post_init__(self):
        if not self.regressors.stacked or self.regressors.w1.shape[0] != self.schedule.T:
            raise ValueError("need exactly T stacked regressors")

    @property
    def dim(self) -> int:
        return self.regressors.dim

    @property
    def T(self) -> int:
        return self.schedule.T

    def predict_noise(self, t: int, s_t: NDArray) -> NDArray:
        net = self.regressors
        s_t = np.asarray(s_t, dtype=float)
        pre = s_t @ net.w1[t - 1].T + net.b1[t - 1]
        return np.maximum(pre, 0.0) @ net.w2[t - 1].T + net.b2[t - 1]

    def regressor(self, t: int) -> Mlp:
        return self.regressors.stage(t - 1)


def train_prior(dataset: ArrayLike, sched: DiffusionSchedule, cfg: TrainConfig,
                hidden: int = DEFAULT_HIDDEN) -> DiffusionModel:
    """Fit each stage's noise regressor by least squares on fresh forward draws.

    Every batch draws new ``(s0, eps)`` pairs: ``s0`` uniformly from the
    dataset and ``eps`` standard normal. One epoch is ``ceil(N / batch)``
    steps. All T regressors train in lockstep but share no parameters.
    """
    data = np.asarray(dataset, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("dataset must be a non-empty (N, d) array")
    n, d = data.shape
    T = sched.T
    rng = np.random.default_rng(cfg.seed)
    net = init_mlp(d, hidden, rng, stack=T)
    sa = np.sqrt(sched.alpha_bar[1:])[:, None, None]
    sb = np.sqrt(1.0 - sched.alpha_bar[1:])[:, None, None]
    steps = math.ceil(n / cfg.batch_size)
    epoch_loss = np.zeros(T)
    for _ in range(cfg.epochs):
        epoch_loss[:] = 0.0
        for _ in range(steps):
            idx = rng.integers(0, n, size=(T, cfg.batch_size))
            eps = rng.standard_normal((T, cfg.batch_size, d))
            s_t = sa * data[idx] + sb * eps
            _, loss = grad_step(net, s_t, eps, cfg)
            epoch_loss += loss
    net.adam_m.clear()
    net.adam_v.clear()
    return DiffusionModel(sched, net, epoch_loss / steps)


def reverse_mean(model: DiffusionModel, t: int, s_t: ArrayLike) -> tuple[NDArray, NDArray]:
    """Reverse-step mean and the clean-sample estimate at stage ``t``.

    ``s_t`` may be a single point (d,) or a batch (B, d).
    """
    sched = model.schedule
    sched.check_stage(t)
    s_t = np.asarray(s_t, dtype=float)
    ab = sched.alpha_bar[t]
    s0_hat = (s_t - math.sqrt(1.0 - ab) * model.predict_noise(t, s_t)) / math.sqrt(ab)
    c0, ct = sched.posterior_coefficients(t)
    return c0 * s0_hat + ct * s_t, s0_hat


def prior_chain(model: DiffusionModel, noise: NDArray) -> NDArray:
    """Run the unconditional reverse chain on pre-drawn standard normals.

    ``noise`` has shape (R, T + 1, d); ``noise[:, T]`` seeds ``S_T`` and
    ``noise[:, t - 1]`` perturbs the draw of ``S_{t-1}`` at stage ``t``.
    """
    sched = model.schedule
    s = noise[:, sched.T].copy()
    for t in range(sched.T, 0, -1):
        mu, _ = reverse_mean(model, t, s)
        s = mu + math.sqrt(sched.beta_tilde[t - 1]) * noise[:, t - 1]
    return s


def draw_chain_noise(rng: np.random.Generator, T: int, d: int) -> NDArray:
    """Standard normals consumed by one chain draw, shape (T + 1, d)."""
    return rng.standard_normal((T + 1, d))


def sample_prior(model: DiffusionModel, rng: np.random.Generator,
                 size: int | None = None) -> NDArray:
    """Draw from the learned prior; shape (d,) or (size, d)."""
    count = 1 if size is None else size
    noise = np.stack([draw_chain_noise(rng, model.T, model.dim) for _ in range(count)])
    out = prior_chain(model, noise)
    return out[0] if size is None else out


def _model_document(model: DiffusionModel) -> dict:
    net = model.regressors
    stages = []
    for i in range(model.T):
        stages.append({k: np.asarray(getattr(net, k)[i]).ravel().tolist()
                       for k in ("w1", "b1", "w2", "b2")})
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "dim": model.dim,
        "hidden": net.hidden,
        "schedule": {"T": model.T, "alpha": model.schedule.alpha.tolist()},
        "stages": stages,
    }
    if model.train_loss is not None:
        doc["train_loss"] = np.asarray(model.train_loss).tolist()
    return doc


def save_model(model: DiffusionModel, path: str | Path) -> None:
    """Write the model as JSON; weights are row-major flat lists."""
    Path(path).write_text(json.dumps(_model_document(model), indent=1) + "\n")


def load_model(path: str | Path) -> DiffusionModel:
    doc = json.loads(Path(path).read_text())
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {version!r}")
    d, h = int(doc["dim"]), int(doc["hidden"])
    sched = DiffusionSchedule(np.array(doc["schedule"]["alpha"], dtype=float))
    if len(doc["stages"]) != sched.T or int(doc["schedule"]["T"]) != sched.T:
        raise ValueError("stage count does not match schedule")
    shapes = {"w1": (h, d), "b1": (h,), "w2": (d, h), "b2": (d,)}
    arrays = {k: np.stack([np.array(st[k], dtype=float).reshape(shp) for st in doc["stages"]])
              for k, shp in shapes.items()}
    loss = doc.get("train_loss")
    return DiffusionModel(sched, Mlp(**arrays),
                          None if loss is None else np.array(loss, dtype=float))


def load_samples(path: str | Path, delimiter: str = ",") -> NDArray:
    """Read delimiter-separated samples, one per line, d columns."""
    return np.atleast_2d(np.loadtxt(path, delimiter=delimiter, dtype=float, ndmin=2))


def save_samples(samples: ArrayLike, path: str | Path, delimiter: str = ",") -> None:
    np.savetxt(path, np.atleast_2d(samples), delimiter=delimiter, fmt="%.17g")
