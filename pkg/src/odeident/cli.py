"""Command-line entry point.

Subcommands operate on one experiment config:

    odeident generate -c config.yaml
    odeident train    -c config.yaml --method ensemble --noise 0.05
    odeident evaluate -c config.yaml --method ensemble --noise 0.05
    odeident compare  -c config.yaml
    odeident solve    -c config.yaml --method ensemble --noise 0.0 \
                      --ic 1.0 --ic -0.5 --out sol.csv

Exit codes: 1 for config errors, 2 for training or integration failures,
3 for missing upstream artifacts (datasets, models, reports).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness, metrics, ode
from .nn_core import TrainingError

EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_MISSING = 3


def _add_common(p):
    p.add_argument("-c", "--config", required=True, help="experiment YAML")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker count; 1 guarantees byte-identical reruns")
    p.add_argument("--out", type=str, default=None,
                   help="override the config output_dir")


def _load(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg.seed = int(args.seed)
    if args.out is not None:
        cfg.output_dir = Path(args.out)
    return cfg


def _parse_noise(cfg, value: str) -> float:
    level = float(value)
    for lv in cfg.noise_levels:
        if abs(lv - level) < 1e-12:
            return lv
    raise harness.ConfigError(
        f"noise level {level} not in config levels {cfg.noise_levels}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="odeident",
                                 description="learn ODE right-hand sides "
                                             "from sampled trajectories")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="integrate and write the datasets")
    _add_common(p)

    p = sub.add_parser("train", help="train one method at one noise level")
    _add_common(p)
    p.add_argument("--method", required=True, choices=harness.METHOD_NAMES)
    p.add_argument("--noise", required=True, help="noise level, e.g. 0.05")

    p = sub.add_parser("evaluate", help="re-evaluate a trained model")
    _add_common(p)
    p.add_argument("--method", required=True, choices=harness.METHOD_NAMES)
    p.add_argument("--noise", required=True)

    p = sub.add_parser("compare", help="tabulate all trained methods")
    _add_common(p)

    p = sub.add_parser("solve", help="integrate a learned field from given ICs")
    _add_common(p)
    p.add_argument("--method", required=True, choices=harness.METHOD_NAMES)
    p.add_argument("--noise", required=True)
    p.add_argument("--ic", action="append", required=True,
                   help="comma-separated initial state; repeatable")
    return ap


def _cmd_generate(args) -> int:
    cfg = _load(args)
    for p in harness.run_generate(cfg):
        print(f"wrote {p}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load(args)
    level = _parse_noise(cfg, args.noise)
    report = harness.run_train(cfg, args.method, level)
    print(f"{args.method} @ noise {level:g}: "
          f"train {metrics.format_sig(report.train_mse)} "
          f"test {metrics.format_sig(report.test_mse)} "
          f"recovery {metrics.format_sig(report.recovery_rel_mse)} "
          f"solution {metrics.format_sig(report.solution_rel_mse)}")
    print(f"wrote {harness.report_path(cfg, args.method, level)}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _load(args)
    level = _parse_noise(cfg, args.noise)
    ds = harness.load_dataset_for(cfg, level)
    model = harness.load_trained_model(cfg, args.method, level)
    samples = harness._quotient_samples(cfg, ds)
    grid = harness._recovery_grid(cfg, samples)
    rec, _ = metrics.recovery_error(model, cfg.problem.rhs, grid)
    solver = ode.IntegratorConfig(method="rk4_fixed")
    sol, _ = metrics.solution_error(model, cfg.problem.rhs,
                                    harness._solution_ics(cfg), ds.times, solver)
    print(f"{args.method} @ noise {level:g}: "
          f"recovery {metrics.format_sig(rec)} solution {metrics.format_sig(sol)}")
    return 0


def _cmd_compare(args) -> int:
    cfg = _load(args)
    txt, csv = harness.run_compare(cfg)
    print(Path(txt).read_text(), end="")
    print(f"wrote {txt}")
    print(f"wrote {csv}")
    return 0


def _cmd_solve(args) -> int:
    # for solve, --out names the solution CSV rather than the output_dir
    out_file = args.out
    args.out = None
    cfg = _load(args)
    level = _parse_noise(cfg, args.noise)
    try:
        ics = np.array([[float(v) for v in ic.split(",")] for ic in args.ic])
    except ValueError:
        raise harness.ConfigError(f"malformed --ic value in {args.ic}")
    if ics.shape[1] != cfg.dim:
        raise harness.ConfigError(
            f"ICs must have {cfg.dim} components, got {ics.shape[1]}")
    out = Path(out_file) if out_file else \
        cfg.output_dir / "solutions" / f"{args.method}_{args.noise}.csv"
    path = harness.run_solve(cfg, args.method, level, ics, out)
    print(f"wrote {path}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "compare": _cmd_compare,
    "solve": _cmd_solve,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, ode.IntegrationError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except harness.MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
