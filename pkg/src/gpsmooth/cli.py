"""Command-line entry point ``gpsmooth``.

Exit codes: 0 when every run completed (and every check passed), 2 when some
runs failed, 1 on configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import GPSmoothError, InputContractError
from .harness import EXPERIMENTS, ExperimentConfig, emit_results, run_experiment
from .verification import train_learned_model

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2

log = logging.getLogger("gpsmooth")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpsmooth",
                                     description="Filtering and smoothing in GP dynamic systems.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write result files")
    run.add_argument("experiment", choices=EXPERIMENTS)
    run.add_argument("--config", type=Path, help="JSON config (an earlier manifest also works)")
    run.add_argument("--runs", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--estimators", help="comma-separated estimator names")
    run.add_argument("--out", type=Path)
    run.add_argument("--workers", type=int)
    run.add_argument("--paper-scale", action="store_true",
                     help="use the full run counts (slow)")

    verify = sub.add_parser("verify", help="linear-system equivalence and Monte-Carlo moment checks")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--instances", type=int, default=50)
    verify.add_argument("--samples", type=int, default=1_000_000)
    verify.add_argument("--out", type=Path, default=Path("results/verify"))

    train = sub.add_parser("train", help="train transition and measurement GPs for a system")
    train.add_argument("--system", required=True, choices=("kitagawa", "pendulum", "linear"))
    train.add_argument("-n", type=int, required=True, help="training-set size")
    train.add_argument("--out", type=Path, required=True)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--restarts", type=int, default=10)
    return parser


def _config_from_args(args) -> ExperimentConfig:
    if args.config is not None:
        cfg = ExperimentConfig.load(args.config)
        if cfg.experiment != args.experiment:
            raise InputContractError(
                f"config is for {cfg.experiment!r}, command asked for {args.experiment!r}")
    else:
        cfg = ExperimentConfig(args.experiment)
    if args.runs is not None:
        cfg.runs = args.runs
    if args.seed is not None:
        cfg.seed = args.seed
    if args.estimators:
        cfg.estimators = [e.strip() for e in args.estimators.split(",") if e.strip()]
    if args.out is not None:
        cfg.out = str(args.out)
    if args.workers is not None:
        cfg.workers = args.workers
    if args.paper_scale:
        cfg.paper_scale = True
    return cfg.resolved()


def _report(result) -> None:
    for row in result.rows:
        print(f"{row.estimator:8s} rmse={row.rmse:.4g} mae={row.mae:.4g} nll={row.nll:.4g} "
              f"(+-{row.stderr_95['nll']:.3g}) runs={row.runs} completion={row.completion_rate:.3f}")
    for check in result.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status} {check.name}: {check.error:.3g} (tol {check.tolerance:.3g})")


def _run(args) -> int:
    cfg = _config_from_args(args)
    result = run_experiment(cfg)
    emit_results(result)
    _report(result)
    return EXIT_FAILED if result.failures else EXIT_OK


def _verify(args) -> int:
    cfg = ExperimentConfig("linear-sanity", seed=args.seed, out=str(args.out),
                           mc_instances=args.instances, mc_samples=args.samples).resolved()
    result = run_experiment(cfg)
    emit_results(result)
    _report(result)
    return EXIT_FAILED if result.failures else EXIT_OK


def _train(args) -> int:
    from .systems import make_system, system_manifest

    system = make_system(args.system)
    seq = np.random.SeedSequence(args.seed)
    data_seed, train_seed = seq.spawn(2)
    model = train_learned_model(system, args.n, data_seed, train_seed, args.restarts)
    doc = {
        "system": system_manifest(system, args.seed),
        "n": args.n,
        "gp_f": json.loads(model.gp_f.to_json()),
        "gp_g": json.loads(model.gp_g.to_json()),
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _run, "verify": _verify, "train": _train}
    try:
        return handlers[args.command](args)
    except (InputContractError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"gpsmooth: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GPSmoothError as exc:
        print(f"gpsmooth: run failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
