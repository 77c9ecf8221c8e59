"""Command-line entry point: ``laplace-dps <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments as ex

SUBCOMMANDS = ("train-prior", "sample-prior", "run-bandit", "ablation", "posterior-sample")


def _config(args) -> ex.ExperimentConfig:
    raw = ex.load_config(args.config)
    overrides = list(args.set or [])
    for flag in ("seed", "out", "replicates", "threads", "rounds"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{flag}={value}")
    if getattr(args, "agents", None):
        overrides.append(f"agents=[{args.agents}]")
    if getattr(args, "model", None):
        overrides.append(f"model_path={args.model}")
    return ex.ExperimentConfig(ex.apply_overrides(raw, overrides))


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help=f"YAML file or preset name ({', '.join(ex.PRESETS)})")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a configuration value, e.g. environment.K=10")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="laplace-dps", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-prior", help="train a diffusion prior and write the model file")
    _common(p)
    p.add_argument("--model", help="model file to write (default OUT/model.json)")

    p = sub.add_parser("sample-prior", help="draw samples from a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="prior_draws.csv", help="output sample file")

    p = sub.add_parser("run-bandit", help="run Thompson-sampling agents and emit regret CSVs")
    _common(p)
    p.add_argument("--agents", help="comma-separated agent list")
    p.add_argument("--replicates", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--model", help="trained model file (trained and saved if missing)")

    p = sub.add_parser("ablation", help="sweep diffusion stages or training-set size")
    _common(p)
    p.add_argument("--sweep", required=True, choices=("T_values", "sample_counts"))
    p.add_argument("--values", required=True, help="comma-separated integers")
    p.add_argument("--agents", help="DiffTS and/or DPS")
    p.add_argument("--replicates", type=int)
    p.add_argument("--rounds", type=int)

    p = sub.add_parser("posterior-sample", help="one-shot posterior draws for a history file")
    p.add_argument("--model", required=True)
    p.add_argument("--history", required=True,
                   help="delimiter-separated rows: d feature columns then the observation")
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mean-function", default="linear", choices=("linear", "logistic"))
    p.add_argument("--sampler", default="laplace", choices=("laplace", "dps"))
    p.add_argument("--out", default="posterior_draws.csv")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train-prior":
            ex.cmd_train_prior(_config(args))
        elif args.command == "sample-prior":
            draws = ex.cmd_sample_prior(args.model, args.count, args.seed, args.out)
            print(f"wrote {draws.shape[0]} draws to {args.out}")
        elif args.command == "run-bandit":
            cfg = _config(args)
            ex.cmd_run_bandit(cfg)
            print(f"results in {Path(cfg.out).resolve()}")
        elif args.command == "ablation":
            values = [int(v) for v in args.values.split(",") if v.strip()]
            ex.cmd_ablation(_config(args), args.sweep, values)
        elif args.command == "posterior-sample":
            draws = ex.cmd_posterior_sample(args.model, args.history, args.noise, args.count,
                                            args.seed, args.out, args.mean_function,
                                            args.sampler)
            print(f"wrote {draws.shape[0]} draws to {args.out}")
    except Exception as exc:  # noqa: BLE001 - surface any failure as a nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
