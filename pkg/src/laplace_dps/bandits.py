"""Contextual Thompson sampling with Gaussian, mixture and diffusion priors.

Replicate episodes run in lockstep: every round, all live replicates draw
their posterior samples through one batched call. Each replicate owns two
random streams (environment and agent) derived from ``(master_seed,
replicate)``, so a replicate's trajectory does not depend on which other
replicates share its batch or on the worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit, logsumexp

from .bayes import History, linear_posterior, summarize
from .diffusion import BadParam, DiffusionModel
from .glm import LOGISTIC, irls_batch
from .linalg import GaussianBelief, gaussian_sample, spd_inverse
from .samplers import dps_baseline_batch, laplace_dps_glm_batch, laplace_dps_linear_batch

__all__ = [
    "STRATEGIES",
    "BanditEnv",
    "EnvSpec",
    "Agent",
    "GaussianMixture",
    "RegretTrace",
    "fit_gaussian_mle",
    "fit_gmm_em",
    "em_fit_once",
    "mixture_posterior_sample",
    "mixture_log_evidence",
    "run_episode",
    "run_lockstep",
    "run_replicates",
    "replicate_rngs",
    "unit_ball",
]

STRATEGIES = ("TS", "TunedTS", "MixTS", "DiffTS", "DPS", "Oracle")
MLE_JITTER = 1e-9
GMM_COV_FLOOR = 1e-6
ENV_STREAM, AGENT_STREAM = 0, 1


def unit_ball(n: int, d: int, rng: np.random.Generator) -> NDArray:
    """``n`` points uniform in the unit d-ball."""
    x = rng.standard_normal((n, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x * rng.random((n, 1)) ** (1.0 / d)


# ---------------------------------------------------------------- environments


@dataclass
class BanditEnv:
    """One bandit instance with a fixed hidden parameter.

    ``action_source`` produces the K x d action features for a round. With
    ``fixed_actions`` set it is called once and reused.
    """

    theta_star: NDArray[np.float64]
    reward: str
    noise: float
    action_source: Callable[[np.random.Generator], NDArray]
    rng: np.random.Generator
    fixed_actions: bool = False
    _cached: NDArray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.reward not in ("linear", "logistic"):
            raise ValueError(f"unknown reward kind {self.reward!r}")

    def actions(self) -> NDArray:
        if self.fixed_actions:
            if self._cached is None:
                self._cached = np.asarray(self.action_source(self.rng), dtype=float)
            return self._cached
        return np.asarray(self.action_source(self.rng), dtype=float)

    def mean_rewards(self, x: NDArray) -> NDArray:
        u = x @ self.theta_star
        return u if self.reward == "linear" else expit(u)

    def observe(self, mean_reward: float) -> float:
        # one draw per round regardless of the action keeps streams paired
        if self.reward == "linear":
            return mean_reward + self.noise * self.rng.standard_normal()
        return float(self.rng.random() < mean_reward)


@dataclass(frozen=True)
class EnvSpec:
    """Recipe for per-replicate environments.

    ``features`` is ``"fixed"`` (one unit-ball action set per problem),
    ``"per_round"`` (fresh unit-ball actions each round) or
    ``"embeddings"`` (K random rows of ``users`` each round, theta* a
    random row of ``items``).
    """

    d: int
    K: int
    noise: float
    reward: str = "linear"
    features: str = "fixed"
    theta_prior: Callable[[int, np.random.Generator], NDArray] | None = None
    users: NDArray | None = None
    items: NDArray | None = None

    def make(self, rng: np.random.Generator) -> BanditEnv:
        if self.features == "embeddings":
            if self.users is None or self.items is None:
                raise ValueError("embedding environments need user and item matrices")
            theta = self.items[rng.integers(0, self.items.shape[0])]
            users = self.users
            source = lambda g: users[g.integers(0, users.shape[0], size=self.K)]
            fixed = False
        else:
            if self.theta_prior is None:
                raise ValueError("synthetic environments need a theta prior")
            theta = np.asarray(self.theta_prior(1, rng), dtype=float)[0]
            source = lambda g: unit_ball(self.K, self.d, g)
            fixed = self.features == "fixed"
        return BanditEnv(theta, self.reward, self.noise, source, rng, fixed_actions=fixed)


# ---------------------------------------------------------------- mixtures


@dataclass(frozen=True)
class GaussianMixture:
    weights: NDArray[np.float64]
    components: tuple[GaussianBelief, ...]

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size != len(self.components) or w.size == 0:
            raise ValueError("need one weight per component")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("mixture weights must be positive and sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def k(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def log_pdf(self, x: NDArray) -> NDArray:
        x = np.atleast_2d(x)
        return logsumexp(np.stack([np.log(w) + _log_normal(x, c.mean, c.covariance)
                                   for w, c in zip(self.weights, self.components)]), axis=0)

    def sample(self, n: int, rng: np.random.Generator) -> NDArray:
        which = rng.choice(self.k, size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for j, comp in enumerate(self.components):
            sel = which == j
            if sel.any():
                out[sel] = gaussian_sample(comp, rng, size=int(sel.sum()))
        return out


def _log_normal(x: NDArray, mean: NDArray, cov: NDArray) -> NDArray:
    chol = np.linalg.cholesky(cov)
    z = np.linalg.solve(chol, (x - mean).T)
    return (-0.5 * np.sum(z * z, axis=0) - np.sum(np.log(np.diag(chol)))
            - 0.5 * mean.size * math.log(2 * math.pi))


def fit_gaussian_mle(samples: ArrayLike) -> GaussianBelief:
    """Maximum-likelihood mean and (1/N) covariance, with a tiny diagonal jitter."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise BadParam("need at least two samples of shape (N, d)")
    mean = x.mean(axis=0)
    cov = (x - mean).T @ (x - mean) / x.shape[0]
    scale = max(1.0, float(np.trace(cov)) / x.shape[1])
    return GaussianBelief(mean, cov + MLE_JITTER * scale * np.eye(x.shape[1]))


def em_fit_once(x: NDArray, k: int, rng: np.random.Generator, max_iter: int = 500,
                tol: float = 1e-8) -> tuple[GaussianMixture, list[float]]:
    """One EM run from a random initialization; returns the mixture and its
    per-iteration mean log-likelihood trace."""
    n, d = x.shape
    floor = GMM_COV_FLOOR * np.eye(d)
    means = x[rng.choice(n, size=k, replace=False)]
    base = np.cov(x.T, bias=True).reshape(d, d) + floor
    covs = np.stack([base] * k)
    weights = np.full(k, 1.0 / k)
    trace: list[float] = []
    for _ in range(max_iter):
        logp = np.stack([np.log(weights[j]) + _log_normal(x, means[j], covs[j])
                         for j in range(k)], axis=1)
        norm = logsumexp(logp, axis=1)
        trace.append(float(norm.mean()))
        resp = np.exp(logp - norm[:, None])
        nk = resp.sum(axis=0) + 1e-300
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        for j in range(k):
            diff = x - means[j]
            covs[j] = (resp[:, j, None] * diff).T @ diff / nk[j] + floor
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= tol * max(1.0, abs(trace[-1])):
            break
    weights = weights / weights.sum()
    mix = GaussianMixture(weights, tuple(GaussianBelief(m, c) for m, c in zip(means, covs)))
    return mix, trace


def fit_gmm_em(samples: ArrayLike, k: int, rng: np.random.Generator,
               restarts: int = 5) -> GaussianMixture:
    """EM for a k-component Gaussian mixture, best of ``restarts`` by likelihood."""
    x = np.asarray(samples, dtype=float)
    if k < 1 or x.ndim != 2 or x.shape[0] < k * (x.shape[1] + 1):
        raise BadParam(f"need k >= 1 and at least k*(d+1) samples, got k={k}, shape {x.shape}")
    best, best_ll = None, -np.inf
    for _ in range(restarts):
        mix, trace = em_fit_once(x, k, rng)
        ll = float(np.mean(mix.log_pdf(x)))
        if ll > best_ll:
            best, best_ll = mix, ll
    return best


def _mixture_arrays(mix: GaussianMixture):
    means = np.stack([c.mean for c in mix.components])
    precisions = np.stack([spd_inverse(c.covariance) for c in mix.components])
    logdets = np.array([np.linalg.slogdet(c.covariance)[1] for c in mix.components])
    return means, precisions, logdets


def _mixture_posterior_batch(mix: GaussianMixture, precision: NDArray, weighted_sum: NDArray):
    """Per-replicate component posteriors and log responsibilities.

    Returns means (R, k, d), covariances (R, k, d, d), log_resp (R, k).
    """
    means, precs, logdets = _mixture_arrays(mix)
    post_prec = precs[None] + precision[:, None]
    rhs = np.einsum("kij,kj->ki", precs, means)[None] + weighted_sum[:, None]
    post_cov = np.linalg.inv(post_prec)
    post_cov = 0.5 * (post_cov + np.swapaxes(post_cov, -1, -2))
    post_mean = np.einsum("rkij,rkj->rki", post_cov, rhs)
    _, logdet_post_prec = np.linalg.slogdet(post_prec)
    quad_prior = np.einsum("ki,ki->k", means, np.einsum("kij,kj->ki", precs, means))
    quad_post = np.einsum("rki,rki->rk", post_mean, rhs)
    log_ev = -0.5 * (logdets[None] + logdet_post_prec + quad_prior[None] - quad_post)
    log_w = np.log(mix.weights)[None] + log_ev
    return post_mean, post_cov, log_w - logsumexp(log_w, axis=1, keepdims=True)


def mixture_log_evidence(mix: GaussianMixture, h: History) -> NDArray:
    """Log posterior responsibilities of each component given ``h``."""
    ev = summarize(h)
    _, _, log_resp = _mixture_posterior_batch(mix, ev.precision[None], ev.weighted_sum[None])
    return log_resp[0]


def _pick_and_draw(post_mean, post_cov, log_resp, u, z):
    r = post_mean.shape[0]
    if log_resp.shape[1] == 1:
        which = np.zeros(r, dtype=int)
    else:
        cdf = np.cumsum(np.exp(log_resp), axis=1)
        which = np.minimum((u[:, None] >= cdf).sum(axis=1), log_resp.shape[1] - 1)
    idx = np.arange(r)
    chol = np.linalg.cholesky(post_cov[idx, which])
    return post_mean[idx, which] + np.einsum("rij,rj->ri", chol, z)


def mixture_posterior_sample(mix: GaussianMixture, h: History,
                             rng: np.random.Generator) -> NDArray:
    """Exact posterior draw under a Gaussian-mixture prior and linear evidence.

    A component is drawn from its posterior responsibility (skipped when
    ``k == 1``), then a point from that component's conjugate posterior.
    """
    if mix.k == 1:
        return gaussian_sample(linear_posterior(mix.components[0], h), rng)
    ev = summarize(h)
    pm, pc, lr = _mixture_posterior_batch(mix, ev.precision[None], ev.weighted_sum[None])
    u = np.array([rng.random()])
    z = rng.standard_normal((1, mix.dim))
    return _pick_and_draw(pm, pc, lr, u, z)[0]


# ---------------------------------------------------------------- agents


@dataclass
class Agent:
    """Thompson-sampling agent.

    ``prior`` is a GaussianBelief (TS, TunedTS), a GaussianMixture (MixTS)
    or a DiffusionModel (DiffTS, DPS); the Oracle agent (test only) samples
    the true parameter and takes no prior.
    """

    strategy: str
    prior: GaussianBelief | GaussianMixture | DiffusionModel | None = None
    name: str | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.name is None:
            self.name = self.strategy
        expected = {"TS": GaussianBelief, "TunedTS": GaussianBelief,
                    "MixTS": GaussianMixture, "DiffTS": DiffusionModel,
                    "DPS": DiffusionModel}.get(self.strategy)
        if expected is not None and not isinstance(self.prior, expected):
            raise TypeError(f"{self.strategy} needs a {expected.__name__} prior")

    def check_reward(self, reward: str) -> None:
        if self.strategy == "MixTS" and reward != "linear":
            raise ValueError("MixTS supports linear rewards only")

    def noise_width(self, d: int) -> int:
        """Standard normals consumed per draw (after any uniform draw)."""
        if self.strategy in ("DiffTS", "DPS"):
            return (self.prior.T + 1) * d
        return d


@dataclass
class _Evidence:
    """Per-replicate history in both raw and noise-scaled form."""

    r: int
    d: int
    n_max: int
    noise: float
    count: int = 0

    def __post_init__(self):
        self.features = np.zeros((self.r, self.n_max, self.d))
        self.obs = np.zeros((self.r, self.n_max))
        self.gram = np.zeros((self.r, self.d, self.d))
        self.xty = np.zeros((self.r, self.d))
        self.yty = np.zeros(self.r)

    def add(self, phi: NDArray, y: NDArray) -> None:
        self.features[:, self.count] = phi
        self.obs[:, self.count] = y
        self.gram += np.einsum("ri,rj->rij", phi, phi)
        self.xty += phi * y[:, None]
        self.yty += y * y
        self.count += 1

    def scaled(self, live: NDArray):
        w = self.noise ** -2
        return w * self.gram[live], w * self.xty[live]


def _draw_batch(agent: Agent, reward: str, ev: _Evidence, live: NDArray,
                rngs: Sequence[np.random.Generator], thetas_star: NDArray):
    """Posterior draws for the live replicates; returns (theta, finite_mask)."""
    d = ev.d
    idx = np.flatnonzero(live)
    ok = np.ones(idx.size, dtype=bool)
    if agent.strategy == "Oracle":
        return thetas_star[idx].copy(), ok
    if agent.strategy == "MixTS" and agent.prior.k > 1:
        u = np.array([rngs[i].random() for i in idx])
    if agent.strategy in ("DiffTS", "DPS"):
        T = agent.prior.T
        noise = np.stack([rngs[i].standard_normal((T + 1, d)) for i in idx])
    else:
        z = np.stack([rngs[i].standard_normal(d) for i in idx])
    n = ev.count
    if agent.strategy in ("TS", "TunedTS"):
        prior = agent.prior
        if reward == "linear":
            prec, b = ev.scaled(live)
            p0 = spd_inverse(prior.covariance)
            post_prec = p0[None] + prec
            cov = np.linalg.inv(post_prec)
            cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
            mean = np.einsum("rij,rj->ri", cov, (p0 @ prior.mean)[None] + b)
            if n == 0:
                mean = np.broadcast_to(prior.mean, (idx.size, d))
                cov = np.broadcast_to(prior.covariance, (idx.size, d, d))
        else:
            p0 = spd_inverse(prior.covariance)
            mean, cov = irls_batch(np.broadcast_to(prior.mean, (idx.size, d)),
                                   np.broadcast_to(p0, (idx.size, d, d)),
                                   ev.features[idx, :n], ev.obs[idx, :n], LOGISTIC)
        chol = np.linalg.cholesky(cov)
        return mean + np.einsum("rij,rj->ri", chol, z), ok
    if agent.strategy == "MixTS":
        prec, b = ev.scaled(live)
        if agent.prior.k == 1:
            u = np.zeros(idx.size)
        pm, pc, lr = _mixture_posterior_batch(agent.prior, prec, b)
        return _pick_and_draw(pm, pc, lr, u, z), ok
    model = agent.prior
    if agent.strategy == "DiffTS":
        if reward == "linear":
            prec, b = ev.scaled(live)
            return laplace_dps_linear_batch(model, prec, b, noise), ok
        return laplace_dps_glm_batch(model, ev.features[idx, :n], ev.obs[idx, :n],
                                     LOGISTIC, noise), ok
    return dps_baseline_batch(model, ev.gram[live], ev.xty[live], ev.yty[live], noise)


@dataclass
class RegretTrace:
    """Per-round expected regret of one episode.

    ``truncated`` marks an episode stopped early because the sampler
    diverged; ``increments`` then covers only the completed rounds.
    """

    increments: NDArray[np.float64]
    truncated: bool = False
    sample_seconds: float = 0.0

    @property
    def cumulative(self) -> NDArray[np.float64]:
        return np.cumsum(self.increments)

    @property
    def final(self) -> float:
        return float(self.increments.sum())

    def __len__(self) -> int:
        return self.increments.size


def run_lockstep(envs: Sequence[BanditEnv], agent: Agent, n: int,
                 agent_rngs: Sequence[np.random.Generator]) -> list[RegretTrace]:
    """Run one episode per environment, all replicates advancing together."""
    r = len(envs)
    if r == 0:
        return []
    d = envs[0].theta_star.size
    reward = envs[0].reward
    agent.check_reward(reward)
    ev = _Evidence(r, d, n, envs[0].noise)
    thetas = np.stack([e.theta_star for e in envs])
    live = np.ones(r, dtype=bool)
    regret = np.zeros((r, n))
    completed = np.full(r, n)
    sample_seconds = 0.0
    for k in range(n):
        xs = np.stack([e.actions() for e in envs])
        t0 = time.perf_counter()
        theta_tilde, ok = _draw_batch(agent, reward, ev, live, agent_rngs, thetas)
        sample_seconds += time.perf_counter() - t0
        live_idx = np.flatnonzero(live)
        failed = live_idx[~ok]
        completed[failed] = k
        live[failed] = False
        phi = np.zeros((r, d))
        y = np.zeros(r)
        for j, i in enumerate(live_idx):
            env = envs[i]
            means = env.mean_rewards(xs[i])
            if ok[j]:
                a = int(np.argmax(xs[i] @ theta_tilde[j]))
                regret[i, k] = max(means.max() - means[a], 0.0)
                phi[i] = xs[i, a]
                y[i] = env.observe(means[a])
            else:
                env.observe(0.0)
        ev.add(phi, y)
        if not live.any():
            break
    per_rep = sample_seconds / r
    return [RegretTrace(regret[i, :completed[i]], truncated=bool(completed[i] < n),
                        sample_seconds=per_rep) for i in range(r)]


def run_episode(env: BanditEnv, agent: Agent, n: int,
                rng: np.random.Generator) -> RegretTrace:
    """Thompson sampling for ``n`` rounds on one environment."""
    return run_lockstep([env], agent, n, [rng])[0]


def replicate_rngs(master_seed: int, replicate: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(environment, agent) generators for one replicate."""
    return tuple(np.random.default_rng(np.random.SeedSequence(master_seed,
                                                              spawn_key=(replicate, s)))
                 for s in (ENV_STREAM, AGENT_STREAM))


def _run_chunk(args):
    spec, agent, n, master_seed, reps = args
    pairs = [replicate_rngs(master_seed, i) for i in reps]
    envs = [spec.make(env_rng) for env_rng, _ in pairs]
    return run_lockstep(envs, agent, n, [a for _, a in pairs])


def run_replicates(spec: EnvSpec, agent: Agent, n: int, replicates: int,
                   master_seed: int, threads: int = 1) -> list[RegretTrace]:
    """Independent episodes ordered by replicate index.

    Environments (theta*, actions, reward noise) depend only on the master
    seed and replicate index, so every agent faces the same problems.
    """
    reps = list(range(replicates))
    if threads <= 1 or replicates < 2:
        return _run_chunk((spec, agent, n, master_seed, reps))
    chunks = [c.tolist() for c in np.array_split(reps, min(threads, replicates))]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(_run_chunk, [(spec, agent, n, master_seed, c) for c in chunks])
        return [trace for part in parts for trace in part]
