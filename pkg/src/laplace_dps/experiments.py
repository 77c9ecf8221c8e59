"""Experiment configuration, presets and the commands behind the CLI.

A configuration is a nested mapping (YAML on disk). Presets ship inside the
package; any value can be overridden with a dotted key such as
``environment.K=10``.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import yaml

from .bandits import (Agent, EnvSpec, RegretTrace, STRATEGIES, fit_gaussian_mle, fit_gmm_em,
                      run_replicates)
from .bayes import History
from .diffusion import (DiffusionModel, load_model, load_samples, make_schedule, sample_prior,
                        save_model, save_samples, train_prior)
from .glm import mean_function
from .linalg import GaussianBelief
from .mlp import TrainConfig
from .priors import PriorGenerator
from .samplers import dps_baseline, laplace_dps_glm, laplace_dps_linear

__all__ = [
    "PRESETS",
    "OUTPUT_FORMAT_VERSION",
    "ExperimentConfig",
    "load_config",
    "apply_overrides",
    "cmd_train_prior",
    "cmd_sample_prior",
    "cmd_run_bandit",
    "cmd_ablation",
    "cmd_posterior_sample",
    "summarize_traces",
    "time_single_draws",
]

log = logging.getLogger(__name__)

PRESETS = ("synthetic-mixture", "synthetic-cross", "recsim-linear", "recsim-logistic",
           "clustered-logistic")
OUTPUT_FORMAT_VERSION = 1
REGRET_COLUMNS = ("agent", "replicate", "round", "cumulative_regret")
SUMMARY_COLUMNS = ("agent", "round", "mean", "stderr", "episodes")
EPISODE_COLUMNS = ("agent", "replicate", "rounds_completed", "truncated", "final_regret")
TIMING_COLUMNS = ("agent", "wall_clock_seconds", "sample_seconds_per_draw")
ABLATION_COLUMNS = ("sweep", "value", "agent", "mean_final_regret", "stderr_final_regret",
                    "truncated", "mean_draw_seconds", "train_seconds")

DEFAULTS: dict[str, Any] = {
    "name": "custom",
    "seed": 0,
    "replicates": 100,
    "rounds": 200,
    "threads": 1,
    "out": "out",
    "agents": ["TS", "TunedTS", "MixTS", "DiffTS", "DPS"],
    "mixture_components": 2,
    "model_path": None,
    "environment": {"reward": "linear", "d": 2, "K": 100, "noise": 2.0,
                    "features": "fixed", "user_file": None, "item_file": None},
    "prior": {"kind": "two_gaussian_mixture", "params": {}, "train_samples": 10000},
    "diffusion": {"T": 100, "alpha": 0.97, "hidden": 64, "epochs": 100,
                  "batch_size": 256, "learning_rate": 1e-3},
}


@dataclass
class ExperimentConfig:
    """Validated view of a configuration mapping."""

    raw: dict[str, Any] = field(repr=False)

    def __post_init__(self):
        merged = _deep_merge(copy.deepcopy(DEFAULTS), self.raw)
        self.raw = merged
        for key in ("replicates", "rounds", "threads", "mixture_components"):
            if int(merged[key]) < 1:
                raise ValueError(f"{key} must be positive")
        env = merged["environment"]
        for key in ("d", "K"):
            if int(env[key]) < 1:
                raise ValueError(f"environment.{key} must be positive")
        if float(env["noise"]) <= 0:
            raise ValueError("environment.noise must be positive")
        if env["features"] not in ("fixed", "per_round", "embeddings"):
            raise ValueError(f"unknown environment.features {env['features']!r}")
        for a in self.agents:
            if a not in STRATEGIES:
                raise ValueError(f"unknown agent {a!r}")
        if env["reward"] == "logistic" and "MixTS" in self.agents:
            raise ValueError("MixTS is only defined for linear rewards")
        if int(merged["prior"]["train_samples"]) < 1:
            raise ValueError("prior.train_samples must be positive")
        diff = merged["diffusion"]
        if int(diff["T"]) < 1 or not 0 < float(diff["alpha"]) < 1:
            raise ValueError("diffusion.T must be >= 1 and alpha in (0, 1)")

    def __getattr__(self, key):
        raw = self.__dict__.get("raw")
        if raw is not None and key in raw:
            return raw[key]
        raise AttributeError(key)

    @property
    def agents(self) -> list[str]:
        agents = self.raw["agents"]
        return [a.strip() for a in agents.split(",")] if isinstance(agents, str) else list(agents)

    @property
    def env(self) -> dict[str, Any]:
        return self.raw["environment"]

    def generator(self) -> PriorGenerator:
        p = self.raw["prior"]
        return PriorGenerator(p["kind"], dict(p.get("params") or {}))

    def train_config(self, epochs: int | None = None) -> TrainConfig:
        diff = self.raw["diffusion"]
        return TrainConfig(float(diff["learning_rate"]), int(epochs or diff["epochs"]),
                           int(diff["batch_size"]), int(self.seed))

    def env_spec(self) -> EnvSpec:
        env = self.env
        users = items = None
        if env["features"] == "embeddings":
            users = _require_file(env["user_file"], "environment.user_file")
            items = _require_file(env["item_file"], "environment.item_file")
            d = users.shape[1]
            theta_prior = None
        else:
            d = int(env["d"])
            theta_prior = self.generator().sample
        return EnvSpec(d=d, K=int(env["K"]), noise=float(env["noise"]), reward=env["reward"],
                       features=env["features"], theta_prior=theta_prior,
                       users=users, items=items)

    def to_dict(self) -> dict[str, Any]:
        return copy.deepcopy(self.raw)


def _require_file(path, key):
    if not path:
        raise ValueError(f"{key} is required for embedding environments")
    if not Path(path).exists():
        raise FileNotFoundError(f"{key}: {path} does not exist")
    return load_samples(path)


def _deep_merge(base: dict, extra: dict) -> dict:
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            base[k] = _deep_merge(base[k], v)
        else:
            base[k] = v
    return base


def load_config(source: str | Path | None) -> dict[str, Any]:
    """Read a preset by name or a YAML file by path."""
    if source is None:
        return {}
    if str(source) in PRESETS:
        text = resources.files("laplace_dps.presets").joinpath(f"{source}.yaml").read_text()
    else:
        text = Path(source).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ValueError("configuration must be a mapping")
    return data


def apply_overrides(cfg: dict[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML scalars."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        node = cfg
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = yaml.safe_load(value)
    return cfg


# ---------------------------------------------------------------- helpers


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


PRIOR_SAMPLE_STREAM = 7001
MIXTURE_FIT_STREAM = 7002
TIMING_STREAM = 7003


def training_samples(cfg: ExperimentConfig, n: int | None = None) -> np.ndarray:
    """Samples from the true prior used to fit every learned prior."""
    n = int(n or cfg.raw["prior"]["train_samples"])
    if cfg.env["features"] == "embeddings" and cfg.raw["prior"]["kind"] != "file":
        items = _require_file(cfg.env["item_file"], "environment.item_file")
        return items[_stream(cfg.seed, PRIOR_SAMPLE_STREAM).integers(0, items.shape[0], n)]
    return cfg.generator().sample(n, _stream(cfg.seed, PRIOR_SAMPLE_STREAM))


def train_model(cfg: ExperimentConfig, samples: np.ndarray, T: int | None = None,
                epochs: int | None = None) -> tuple[DiffusionModel, float]:
    diff = cfg.raw["diffusion"]
    sched = make_schedule(int(T or diff["T"]), float(diff["alpha"]))
    t0 = time.perf_counter()
    model = train_prior(samples, sched, cfg.train_config(epochs), hidden=int(diff["hidden"]))
    return model, time.perf_counter() - t0


def build_agents(cfg: ExperimentConfig, samples: np.ndarray,
                 model: DiffusionModel | None) -> list[Agent]:
    d = samples.shape[1]
    agents = []
    for name in cfg.agents:
        if name == "TS":
            agents.append(Agent("TS", GaussianBelief.standard(d)))
        elif name == "TunedTS":
            agents.append(Agent("TunedTS", fit_gaussian_mle(samples)))
        elif name == "MixTS":
            mix = fit_gmm_em(samples, int(cfg.mixture_components),
                             _stream(cfg.seed, MIXTURE_FIT_STREAM))
            agents.append(Agent("MixTS", mix))
        elif name in ("DiffTS", "DPS"):
            agents.append(Agent(name, model))
        else:
            agents.append(Agent(name))
    return agents


def summarize_traces(traces: Sequence[RegretTrace], n: int):
    """Per-round mean and standard error over episodes that reached each round."""
    means, errs, counts = np.zeros(n), np.zeros(n), np.zeros(n, dtype=int)
    cums = [t.cumulative for t in traces]
    for k in range(n):
        vals = np.array([c[k] for c in cums if c.size > k])
        counts[k] = vals.size
        if vals.size:
            means[k] = vals.mean()
            errs[k] = vals.std(ddof=1) / math.sqrt(vals.size) if vals.size > 1 else 0.0
    return means, errs, counts


def final_stats(traces: Sequence[RegretTrace]) -> tuple[float, float, int]:
    """Mean and standard error of final regret over completed episodes."""
    finals = np.array([t.final for t in traces if not t.truncated])
    truncated = sum(t.truncated for t in traces)
    if finals.size == 0:
        return float("nan"), float("nan"), truncated
    se = finals.std(ddof=1) / math.sqrt(finals.size) if finals.size > 1 else 0.0
    return float(finals.mean()), float(se), truncated


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _prepare_out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, cfg: ExperimentConfig, files: dict[str, Sequence[str]]) -> None:
    doc = {"format_version": OUTPUT_FORMAT_VERSION, "config": cfg.to_dict(),
           "files": {k: list(v) for k, v in files.items()}}
    (out / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands


def cmd_train_prior(cfg: ExperimentConfig) -> dict[str, Any]:
    """Sample the configured prior, train the diffusion model, write it out."""
    out = _prepare_out(cfg)
    samples = training_samples(cfg)
    model, seconds = train_model(cfg, samples)
    model_path = Path(cfg.model_path or out / "model.json")
    save_model(model, model_path)
    save_samples(samples, out / "prior_samples.csv")
    loss = model.train_loss
    log.info("trained %d stages in %.1fs", model.T, seconds)
    print(f"trained T={model.T} d={model.dim} on {samples.shape[0]} samples in {seconds:.1f}s")
    print("final-epoch training MSE per stage: "
          f"min {loss.min():.4f}  median {np.median(loss):.4f}  max {loss.max():.4f}  "
          f"(stage 1: {loss[0]:.4f}, stage T: {loss[-1]:.4f})")
    return {"model": model, "model_path": model_path, "samples": samples, "seconds": seconds}


def cmd_sample_prior(model_path: str | Path, count: int, seed: int,
                     out_path: str | Path) -> np.ndarray:
    model = load_model(model_path)
    draws = sample_prior(model, np.random.default_rng(seed), size=count)
    save_samples(draws, out_path)
    return draws


def _load_or_train(cfg: ExperimentConfig, samples: np.ndarray, out: Path) -> DiffusionModel:
    path = cfg.model_path
    if path and Path(path).exists():
        model = load_model(path)
        if model.dim != samples.shape[1]:
            raise ValueError(f"model dimension {model.dim} != prior dimension {samples.shape[1]}")
        return model
    model, seconds = train_model(cfg, samples)
    save_model(model, Path(path) if path else out / "model.json")
    print(f"trained diffusion prior (T={model.T}) in {seconds:.1f}s")
    return model


def cmd_run_bandit(cfg: ExperimentConfig) -> dict[str, Any]:
    """Run every configured agent over the replicate episodes and write CSVs."""
    out = _prepare_out(cfg)
    spec = cfg.env_spec()
    samples = training_samples(cfg)
    if samples.shape[1] != spec.d:
        raise ValueError(f"prior dimension {samples.shape[1]} != environment dimension {spec.d}")
    needs_model = any(a in ("DiffTS", "DPS") for a in cfg.agents)
    model = _load_or_train(cfg, samples, out) if needs_model else None
    agents = build_agents(cfg, samples, model)
    n, reps = int(cfg.rounds), int(cfg.replicates)
    results: dict[str, list[RegretTrace]] = {}
    timing = {}
    for agent in agents:
        t0 = time.perf_counter()
        try:
            traces = run_replicates(spec, agent, n, reps, int(cfg.seed), int(cfg.threads))
        except Exception as exc:  # noqa: BLE001 - per-agent failures are recorded
            log.error("agent %s failed: %s", agent.name, exc)
            print(f"agent {agent.name} failed: {exc}")
            continue
        wall = time.perf_counter() - t0
        results[agent.name] = traces
        timing[agent.name] = (wall, sum(t.sample_seconds for t in traces) / (reps * n))
        mean, se, trunc = final_stats(traces)
        print(f"{agent.name:>8}: final regret {mean:8.2f} +- {se:.2f}  "
              f"truncated {trunc}/{reps}  ({wall:.1f}s)")
    _write_csv(out / "regret.csv", REGRET_COLUMNS,
               ((name, i, k + 1, _fmt(c)) for name, traces in results.items()
                for i, tr in enumerate(traces) for k, c in enumerate(tr.cumulative)))
    summary_rows = []
    for name, traces in results.items():
        means, errs, counts = summarize_traces(traces, n)
        summary_rows += [(name, k + 1, _fmt(means[k]), _fmt(errs[k]), int(counts[k]))
                         for k in range(n)]
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary_rows)
    _write_csv(out / "episodes.csv", EPISODE_COLUMNS,
               ((name, i, len(tr), int(tr.truncated), _fmt(tr.final))
                for name, traces in results.items() for i, tr in enumerate(traces)))
    _write_csv(out / "timing.csv", TIMING_COLUMNS,
               ((name, f"{w:.6f}", f"{p:.9f}") for name, (w, p) in timing.items()))
    _write_manifest(out, cfg, {"regret.csv": REGRET_COLUMNS, "summary.csv": SUMMARY_COLUMNS,
                               "episodes.csv": EPISODE_COLUMNS, "timing.csv": TIMING_COLUMNS})
    return {"traces": results, "timing": timing, "model": model}


def time_single_draws(model: DiffusionModel, d: int, seed: int, draws: int = 30,
                      history_size: int = 100, noise: float = 1.0) -> float:
    """Median wall-clock of one linear LaplaceDPS draw on a fixed random history."""
    rng = _stream(seed, TIMING_STREAM)
    phi = rng.standard_normal((history_size, d))
    h = History(phi, phi @ rng.standard_normal(d) + noise * rng.standard_normal(history_size),
                noise)
    laplace_dps_linear(model, h, rng)
    times = []
    for _ in range(draws):
        t0 = time.perf_counter()
        laplace_dps_linear(model, h, rng)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def cmd_ablation(cfg: ExperimentConfig, sweep: str, values: Sequence[int]) -> list[dict]:
    """Retrain the diffusion prior per sweep value and rerun DiffTS.

    ``T_values`` retrains with the given stage counts on the configured
    samples. ``sample_counts`` trains on that many prior samples with the
    epoch count scaled so every run takes the same number of gradient steps.
    """
    if sweep not in ("T_values", "sample_counts"):
        raise ValueError(f"unknown sweep {sweep!r}")
    out = _prepare_out(cfg)
    spec = cfg.env_spec()
    agent_names = [a for a in cfg.agents if a in ("DiffTS", "DPS")] or ["DiffTS"]
    n, reps = int(cfg.rounds), int(cfg.replicates)
    base_n = int(cfg.raw["prior"]["train_samples"])
    batch = int(cfg.raw["diffusion"]["batch_size"])
    base_steps = int(cfg.raw["diffusion"]["epochs"]) * math.ceil(base_n / batch)
    rows = []
    for value in values:
        value = int(value)
        if sweep == "T_values":
            samples = training_samples(cfg)
            model, train_s = train_model(cfg, samples, T=value)
        else:
            samples = training_samples(cfg, value)
            epochs = max(1, round(base_steps / math.ceil(value / batch)))
            model, train_s = train_model(cfg, samples, epochs=epochs)
        draw_s = time_single_draws(model, spec.d, int(cfg.seed))
        for name in agent_names:
            traces = run_replicates(spec, Agent(name, model), n, reps, int(cfg.seed),
                                    int(cfg.threads))
            mean, se, trunc = final_stats(traces)
            row = {"sweep": sweep, "value": value, "agent": name, "mean_final_regret": mean,
                   "stderr_final_regret": se, "truncated": trunc,
                   "mean_draw_seconds": draw_s, "train_seconds": train_s,
                   "finals": [None if t.truncated else t.final for t in traces]}
            rows.append(row)
            print(f"{sweep}={value:>6} {name}: regret {mean:8.2f} +- {se:.2f}  "
                  f"draw {draw_s * 1e3:.2f} ms  train {train_s:.1f}s")
    _write_csv(out / f"ablation_{sweep}.csv", ABLATION_COLUMNS,
               ((r["sweep"], r["value"], r["agent"], _fmt(r["mean_final_regret"]),
                 _fmt(r["stderr_final_regret"]), r["truncated"],
                 f"{r['mean_draw_seconds']:.9f}", f"{r['train_seconds']:.3f}") for r in rows))
    _write_manifest(out, cfg, {f"ablation_{sweep}.csv": ABLATION_COLUMNS})
    return rows


def cmd_posterior_sample(model_path: str | Path, history_path: str | Path, noise: float,
                         count: int, seed: int, out_path: str | Path,
                         mean_fn: str = "linear", sampler: str = "laplace") -> np.ndarray:
    """Posterior draws for a history file whose last column is the observation."""
    model = load_model(model_path)
    rows = load_samples(history_path)
    if rows.shape[1] != model.dim + 1:
        raise ValueError(f"history rows need {model.dim + 1} columns, got {rows.shape[1]}")
    h = History(rows[:, :-1], rows[:, -1], noise)
    rng = np.random.default_rng(seed)
    if sampler == "dps":
        draws = [dps_baseline(model, h, rng) for _ in range(count)]
    elif mean_fn in ("linear", "identity") and sampler == "laplace":
        draws = [laplace_dps_linear(model, h, rng) for _ in range(count)]
    else:
        mf = mean_function(mean_fn)
        draws = [laplace_dps_glm(model, h, mf, rng) for _ in range(count)]
    draws = np.array(draws)
    save_samples(draws, out_path)
    return draws
