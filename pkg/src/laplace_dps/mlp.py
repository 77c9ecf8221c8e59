"""Two-layer ReLU regressor with hand-written backprop and Adam.

Parameters may carry a leading "stack" axis so that several independent
networks of the same shape (one per diffusion stage) are evaluated and
trained in one set of batched matmuls. Stacked training is exactly
equivalent to training each network on its own slice of the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

__all__ = ["Mlp", "TrainConfig", "init_mlp", "forward", "mse_loss", "gradients",
           "grad_step", "input_vjp"]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 2000
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.epochs > 0 and self.batch_size > 0):
            raise ValueError("learning_rate, epochs and batch_size must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class Mlp:
    """``x -> w2 @ relu(w1 @ x + b1) + b2``.

    Shapes: w1 (..., H, d), b1 (..., H), w2 (..., d, H), b2 (..., d). A
    leading axis, when present, indexes independent networks.
    """

    w1: NDArray[np.float64]
    b1: NDArray[np.float64]
    w2: NDArray[np.float64]
    b2: NDArray[np.float64]
    adam_m: dict = field(default_factory=dict, repr=False)
    adam_v: dict = field(default_factory=dict, repr=False)
    adam_step: int = 0

    @property
    def dim(self) -> int:
        return self.w1.shape[-1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[-2]

    @property
    def stacked(self) -> bool:
        return self.w1.ndim == 3

    def params(self) -> dict[str, NDArray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def stage(self, i: int) -> "Mlp":
        """The ``i``-th network of a stack (a view, no optimizer state)."""
        if not self.stacked:
            raise ValueError("not a stacked network")
        return Mlp(self.w1[i], self.b1[i], self.w2[i], self.b2[i])

    def copy(self) -> "Mlp":
        return Mlp(*(p.copy() for p in self.params().values()),
                   adam_m={k: v.copy() for k, v in self.adam_m.items()},
                   adam_v={k: v.copy() for k, v in self.adam_v.items()},
                   adam_step=self.adam_step)


def init_mlp(d: int, hidden: int, rng: np.random.Generator,
             stack: int | None = None) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    lead = () if stack is None else (stack,)
    lim = np.sqrt(6.0 / (d + hidden))
    w1 = rng.uniform(-lim, lim, size=lead + (hidden, d))
    w2 = rng.uniform(-lim, lim, size=lead + (d, hidden))
    return Mlp(w1, np.zeros(lead + (hidden,)), w2, np.zeros(lead + (d,)))


def _bias(b: NDArray, x: NDArray) -> NDArray:
    # stacked biases (S, k) must broadcast against (S, B, k)
    return b[:, None, :] if b.ndim == 2 and x.ndim == 3 else b


def _hidden(m: Mlp, x: NDArray) -> NDArray:
    return x @ np.swapaxes(m.w1, -1, -2) + _bias(m.b1, x)


def forward(m: Mlp, x: NDArray) -> NDArray:
    """Evaluate the network on ``x`` of shape (d,), (B, d) or (S, B, d)."""
    x = np.asarray(x, dtype=float)
    pre = _hidden(m, x)
    return np.maximum(pre, 0.0) @ np.swapaxes(m.w2, -1, -2) + _bias(m.b2, x)


def mse_loss(m: Mlp, x: NDArray, target: NDArray) -> NDArray | float:
    """Mean squared error per coordinate (per network for a stack)."""
    err = forward(m, x) - target
    return np.mean(err ** 2, axis=(-2, -1)) if m.stacked else float(np.mean(err ** 2))


def gradients(m: Mlp, x: NDArray, target: NDArray) -> tuple[dict[str, NDArray], NDArray | float]:
    """Analytic gradient of :func:`mse_loss` and the loss itself."""
    x = np.asarray(x, dtype=float)
    pre = _hidden(m, x)
    act = np.maximum(pre, 0.0)
    out = act @ np.swapaxes(m.w2, -1, -2) + _bias(m.b2, x)
    err = out - target
    n = err.shape[-2] * err.shape[-1]
    loss = np.mean(err ** 2, axis=(-2, -1))
    d_out = (2.0 / n) * err
    d_pre = (d_out @ m.w2) * (pre > 0)
    grads = {
        "w2": np.swapaxes(d_out, -1, -2) @ act,
        "b2": d_out.sum(axis=-2),
        "w1": np.swapaxes(d_pre, -1, -2) @ x,
        "b1": d_pre.sum(axis=-2),
    }
    return grads, (loss if m.stacked else float(loss))


def grad_step(m: Mlp, x: NDArray, target: NDArray,
              cfg: TrainConfig) -> tuple[Mlp, NDArray | float]:
    """One Adam update on the batch; returns the network and the pre-update loss.

    The network is updated in place.
    """
    grads, loss = gradients(m, x, target)
    m.adam_step += 1
    t = m.adam_step
    lr = cfg.learning_rate * np.sqrt(1.0 - ADAM_BETA2 ** t) / (1.0 - ADAM_BETA1 ** t)
    for name, g in grads.items():
        mom = m.adam_m.get(name)
        vel = m.adam_v.get(name)
        if mom is None:
            mom = np.zeros_like(g)
            vel = np.zeros_like(g)
        mom = ADAM_BETA1 * mom + (1.0 - ADAM_BETA1) * g
        vel = ADAM_BETA2 * vel + (1.0 - ADAM_BETA2) * g * g
        m.adam_m[name] = mom
        m.adam_v[name] = vel
        param = getattr(m, name)
        param -= lr * mom / (np.sqrt(vel) + ADAM_EPS)
    return m, loss


def input_vjp(m: Mlp, x: NDArray, v: NDArray) -> NDArray:
    """Vector-Jacobian product ``v^T d forward / dx`` for a single network.

    ``x`` and ``v`` have shape (d,) or (B, d).
    """
    pre = _hidden(m, np.asarray(x, dtype=float))
    return ((np.asarray(v) @ m.w2) * (pre > 0)) @ m.w1
