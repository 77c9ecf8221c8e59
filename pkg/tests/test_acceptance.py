"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is repeated in the terminal summary.
The slow criteria share one trained mixture prior and one pair of ablation
sweeps through module-scoped fixtures.
"""

import time

import numpy as np
import pytest
from scipy import integrate, stats

from laplace_dps.bandits import Agent, run_replicates
from laplace_dps.bayes import History, linear_posterior, summarize
from laplace_dps.diffusion import (forward_marginal_sample, make_schedule,
                                   sample_prior, train_prior)
from laplace_dps.experiments import (ExperimentConfig, apply_overrides, build_agents,
                                     cmd_ablation, cmd_train_prior, final_stats, load_config)
from laplace_dps.glm import IDENTITY, irls
from laplace_dps.linalg import GaussianBelief, gaussian_kl, gaussian_product, gaussian_sample
from laplace_dps.mlp import TrainConfig
from laplace_dps.samplers import laplace_dps_glm, laplace_dps_linear, laplace_dps_linear_batch

pytestmark = pytest.mark.slow

MODES = np.array([[3.0, 0.0], [-3.0, 0.0]])


def preset(name, tmp, *overrides):
    raw = apply_overrides(load_config(name), [f"out={tmp}", *overrides])
    return ExperimentConfig(raw)


@pytest.fixture(scope="module")
def mixture_run(tmp_path_factory):
    """The synthetic-mixture preset with its diffusion prior trained once."""
    tmp = tmp_path_factory.mktemp("mixture")
    cfg = preset("synthetic-mixture", tmp, f"model_path={tmp / 'model.json'}")
    trained = cmd_train_prior(cfg)
    return cfg, trained["model"], trained["samples"]


@pytest.fixture(scope="module")
def ablations(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("ablation")
    cfg = preset("synthetic-cross", tmp, "agents=[DiffTS]")
    return (cmd_ablation(cfg, "T_values", [1, 5, 25, 100]),
            cmd_ablation(cfg, "sample_counts", [100, 1000, 10000]))


def test_c01_schedule_constant(criterion):
    ab = make_schedule(100, 0.97).alpha_bar[100]
    assert criterion(1, 0.047 <= ab <= 0.048, f"alpha_bar_100 = {ab:.6f}")


def grid_moments_1d(m1, v1, m2, v2):
    x = np.linspace(-20, 20, 400_001)
    p = stats.norm.pdf(x, m1, np.sqrt(v1)) * stats.norm.pdf(x, m2, np.sqrt(v2))
    p /= p.sum()
    mean = (p * x).sum()
    return mean, (p * (x - mean) ** 2).sum()


def grid_moments_2d(g1, g2):
    ax = np.linspace(-10, 10, 1001)
    pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    logp = (stats.multivariate_normal.logpdf(pts, g1.mean, g1.covariance)
            + stats.multivariate_normal.logpdf(pts, g2.mean, g2.covariance))
    p = np.exp(logp - logp.max())
    p /= p.sum()
    mean = p @ pts
    c = pts - mean
    return mean, (p[:, None] * c).T @ c


def test_c02_gaussian_algebra(criterion):
    rng = np.random.default_rng(2)
    err = 0.0
    for m1, v1, m2, v2 in [(0.0, 1.0, 3.0, 0.5), (-1.0, 2.0, 1.5, 0.3), (2.0, 0.7, 2.5, 4.0)]:
        g = gaussian_product(GaussianBelief([m1], [[v1]]), GaussianBelief([m2], [[v2]]))
        mean, var = grid_moments_1d(m1, v1, m2, v2)
        err = max(err, abs(g.mean[0] - mean), abs(g.covariance[0, 0] - var))
    g1 = GaussianBelief([1.0, -0.5], [[1.5, 0.4], [0.4, 0.8]])
    g2 = GaussianBelief([-0.5, 1.0], [[0.7, -0.2], [-0.2, 1.2]])
    g = gaussian_product(g1, g2)
    mean, cov = grid_moments_2d(g1, g2)
    err = max(err, np.abs(g.mean - mean).max(), np.abs(g.covariance - cov).max())
    kl_err = 0.0
    for _ in range(20):
        mp, mq = rng.normal(size=2)
        vp, vq = rng.uniform(0.2, 3.0, size=2)
        f = lambda x: stats.norm.pdf(x, mp, np.sqrt(vp)) * (
            stats.norm.logpdf(x, mp, np.sqrt(vp)) - stats.norm.logpdf(x, mq, np.sqrt(vq)))
        numeric, _ = integrate.quad(f, mp - 40, mp + 40, epsabs=1e-12, limit=200)
        kl = gaussian_kl(GaussianBelief([mp], [[vp]]), GaussianBelief([mq], [[vq]]))
        kl_err = max(kl_err, abs(kl - numeric))
    ok = err <= 1e-3 and kl_err <= 1e-4
    assert criterion(2, ok, f"product moment error {err:.2e}, KL error {kl_err:.2e}")


def test_c03_irls_matches_closed_form(criterion):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 6))
        n = int(rng.integers(1, 201))
        a = rng.normal(size=(d, d))
        prior = GaussianBelief(rng.normal(size=d), a @ a.T + 0.3 * np.eye(d))
        phi = rng.normal(size=(n, d))
        h = History(phi, phi @ rng.normal(size=d) + rng.normal(size=n), 1.0)
        lap = irls(prior.mean, prior.covariance, h, IDENTITY)
        exact = linear_posterior(prior, h)
        worst = max(worst, np.abs(lap.mean - exact.mean).max(),
                    np.abs(lap.covariance - exact.covariance).max())
    assert criterion(3, worst <= 1e-8, f"max deviation {worst:.2e} over 100 instances")


def predictor_mse(model, optimum, s0_sampler, rng, n=4000):
    worst = 0.0
    for t in range(1, model.T + 1):
        s_t, _ = forward_marginal_sample(s0_sampler(n), t, model.schedule, rng)
        mse = np.mean((model.predict_noise(t, s_t) - optimum(t, s_t)) ** 2, axis=0)
        worst = max(worst, float(mse.max()))
    return worst


def test_c04_forward_reverse_identities(criterion):
    rng = np.random.default_rng(4)
    sched = make_schedule(100, 0.97)
    s0 = np.array([2.0, -1.0])
    rel = 0.0
    for t in (1, 50, 100):
        x, _ = forward_marginal_sample(np.tile(s0, (1_000_000, 1)), t, sched, rng)
        m, v = np.sqrt(sched.alpha_bar[t]) * s0, 1 - sched.alpha_bar[t]
        rel = max(rel, np.max(np.abs(x.mean(axis=0) - m) / np.abs(m)),
                  np.max(np.abs(x.var(axis=0) - v) / v))
    c0, ct = sched.posterior_coefficients(1)
    coef_err = max(abs(c0 - 1.0), abs(ct))
    point = train_prior(np.zeros((1, 2)), sched, TrainConfig(1e-3, 4000, 256, 0))
    mse_point = predictor_mse(point, lambda t, s: s / np.sqrt(1 - sched.alpha_bar[t]),
                              lambda n: np.zeros((n, 2)), rng)
    normal = train_prior(np.random.default_rng(40).standard_normal((10_000, 2)), sched,
                         TrainConfig(1e-3, 100, 256, 0))
    mse_normal = predictor_mse(normal, lambda t, s: np.sqrt(1 - sched.alpha_bar[t]) * s,
                               lambda n: rng.standard_normal((n, 2)), rng)
    ok = rel <= 0.03 and coef_err <= 1e-12 and mse_point <= 0.1 and mse_normal <= 0.1
    assert criterion(4, ok, f"forward rel err {rel:.2%}, t=1 coefficient err {coef_err:.1e}, "
                            f"predictor MSE point {mse_point:.4f} normal {mse_normal:.4f}")


def test_c05_prior_recovery(criterion, mixture_run):
    _, model, _ = mixture_run
    x = sample_prior(model, np.random.default_rng(5), size=2000)
    nearest = np.argmin(np.linalg.norm(x[:, None] - MODES[None], axis=2), axis=1)
    shares = np.bincount(nearest, minlength=2) / x.shape[0]
    errs = [np.linalg.norm(x[nearest == k].mean(axis=0) - MODES[k]) for k in range(2)]
    ok = np.all((shares >= 0.3) & (shares <= 0.7)) and max(errs) < 0.3
    assert criterion(5, ok, f"mode shares {shares.round(3).tolist()}, "
                            f"mode mean errors {np.round(errs, 3).tolist()}")


def test_c06_consistency(criterion, mixture_run):
    _, model, _ = mixture_run
    rng = np.random.default_rng(6)
    theta = MODES[0]
    phi = rng.standard_normal((10_000, 2))
    y = phi @ theta + rng.standard_normal(10_000)
    medians = []
    for n in (10, 100, 1000, 10_000):
        ev = summarize(History(phi[:n], y[:n], 1.0))
        noise = rng.standard_normal((200, model.T + 1, 2))
        draws = laplace_dps_linear_batch(model, np.broadcast_to(ev.precision, (200, 2, 2)),
                                         np.broadcast_to(ev.weighted_sum, (200, 2)), noise)
        medians.append(float(np.median(np.linalg.norm(draws - theta, axis=1))))
    ok = all(b < a for a, b in zip(medians, medians[1:])) and medians[-1] < 0.1
    assert criterion(6, ok, f"median distance {np.round(medians, 4).tolist()}")


def test_c07_reduction_identities(criterion, mixture_run):
    _, model, _ = mixture_run
    same = all(np.array_equal(laplace_dps_linear(model, History.empty(2), np.random.default_rng(s)),
                              sample_prior(model, np.random.default_rng(s)))
               for s in range(20))
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(20):
        n = int(rng.integers(1, 50))
        phi = rng.standard_normal((n, 2))
        h = History(phi, phi @ MODES[i % 2] + rng.standard_normal(n))
        a = laplace_dps_linear(model, h, np.random.default_rng(100 + i))
        b = laplace_dps_glm(model, h, IDENTITY, np.random.default_rng(100 + i))
        worst = max(worst, float(np.abs(a - b).max()))
    ok = same and worst <= 1e-6
    assert criterion(7, ok, f"empty-history identity {same}, GLM vs linear {worst:.2e}")


def test_c08_regret_ordering(criterion, mixture_run):
    cfg, model, samples = mixture_run
    spec = cfg.env_spec()
    stats_ = {}
    for agent in build_agents(cfg, samples, model):
        if agent.name == "DPS":
            continue
        traces = run_replicates(spec, agent, int(cfg.rounds), int(cfg.replicates), int(cfg.seed))
        stats_[agent.name] = final_stats(traces)[:2]
    (d, d_se), (t, t_se), (m, m_se) = stats_["DiffTS"], stats_["TS"], stats_["MixTS"]
    ok = d + 1.96 * d_se < t - 1.96 * t_se and d <= m + m_se
    detail = "  ".join(f"{k} {v[0]:.2f}+-{v[1]:.2f}" for k, v in stats_.items())
    assert criterion(8, ok, detail)


def test_c09_dps_instability(criterion, mixture_run):
    cfg, model, _ = mixture_run
    spec = cfg.env_spec()
    out = {}
    for name in ("DiffTS", "DPS"):
        traces = run_replicates(spec, Agent(name, model), 500, int(cfg.replicates), int(cfg.seed))
        out[name] = (np.mean([t.final for t in traces if not t.truncated]),
                     np.mean([t.truncated for t in traces]))
    ratio = out["DPS"][0] / out["DiffTS"][0]
    ok = ratio >= 2.0 or out["DPS"][1] >= 0.1
    assert criterion(9, ok, f"DPS {out['DPS'][0]:.1f} vs DiffTS {out['DiffTS'][0]:.1f} "
                            f"(ratio {ratio:.1f}), DPS truncated {out['DPS'][1]:.0%}")


def median_seconds(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def test_c10_compute_scaling(criterion, mixture_run, ablations):
    _, model, _ = mixture_run
    rng = np.random.default_rng(10)
    phi = rng.standard_normal((100, 2))
    h = History(phi, phi @ MODES[0] + 2.0 * rng.standard_normal(100), 2.0)
    prior = GaussianBelief.standard(2)
    diff = median_seconds(lambda: laplace_dps_linear(model, h, rng), 200)
    ts = median_seconds(lambda: gaussian_sample(linear_posterior(prior, h), rng), 2000)
    ratio = diff / ts
    rows = ablations[0]
    T = np.array([r["value"] for r in rows], dtype=float)
    secs = np.array([r["mean_draw_seconds"] for r in rows])
    r2 = stats.linregress(T, secs).rvalue ** 2
    ok = 30 <= ratio <= 400 and r2 > 0.9
    assert criterion(10, ok, f"DiffTS/TS per-draw ratio {ratio:.0f}, T-sweep R^2 {r2:.3f}")


def test_c11_ablation_orderings(criterion, ablations):
    t_rows, n_rows = ablations
    by_t = {r["value"]: r for r in t_rows}
    t_ok = by_t[25]["mean_final_regret"] < by_t[1]["mean_final_regret"]
    # each increase must stay within the standard error of the larger-sample run
    n_ok = all(b["mean_final_regret"] <= a["mean_final_regret"] + b["stderr_final_regret"]
               for a, b in zip(n_rows, n_rows[1:]))
    detail = (f"T=1 {by_t[1]['mean_final_regret']:.2f}, T=25 {by_t[25]['mean_final_regret']:.2f}; "
              + ", ".join(f"n={r['value']} {r['mean_final_regret']:.2f}+-"
                          f"{r['stderr_final_regret']:.2f}" for r in n_rows))
    assert criterion(11, t_ok and n_ok, detail)
