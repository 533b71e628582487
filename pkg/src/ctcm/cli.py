"""Command-line entry point: ``ctcm simulate | theory | validate``."""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .simulator import THREADS_ENV
from .stochastic import UniformBox

log = logging.getLogger("ctcm")


def _open_out(path: str | None):
    if path is None or path == "-":
        return contextlib.nullcontext(sys.stdout)
    p = Path(path)
    if p.parent and not p.parent.exists():
        raise OSError(f"directory {p.parent} does not exist")
    return open(p, "w", newline="")


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def cmd_simulate(args) -> int:
    from .sweep import run_sweep, write_csv

    config = _load(args)
    out = args.out if args.out is not None else config.output.path
    traj_path = config.output.trajectories
    with _open_out(out) as fh:
        traj_ctx = open(traj_path, "w") if traj_path else contextlib.nullcontext(None)
        with traj_ctx as tf:
            write_csv(run_sweep(config, args.threads, tf), config.dim, fh)
    return 0


def _theory_config(args) -> ExperimentConfig:
    if args.config:
        return _load(args)
    if args.n is None or args.theta_a is None or args.theta_d is None:
        raise ConfigError("give --config, or all of --n, --theta-a and --theta-d")
    mean = args.eta_mean if args.eta_mean is not None else [1.0, 1.0]
    eta = UniformBox(tuple(mean), tuple([1.0] * len(mean)))
    return ExperimentConfig(
        theta_a=tuple(args.theta_a),
        theta_d=tuple(args.theta_d),
        n=tuple(args.n),
        dim=len(mean),
        eta={"kind": "uniform-box", "mean": list(eta.center), "half_width": list(eta.half_width)},
    )


def cmd_theory(args) -> int:
    from .sweep import theory_rows, write_theory

    config = _theory_config(args)
    try:
        rows = theory_rows(config)
    except ValueError as exc:
        raise ConfigError(str(exc), "params") from None
    with _open_out(args.out) as fh:
        write_theory(rows, config.dim, fh)
    return 0


def cmd_validate(args) -> int:
    from .validate import DEFAULT_SEED, run_checks

    config = load_config(args.config) if args.config else None
    seed = DEFAULT_SEED if args.seed is None else args.seed
    names = args.checks.split(",") if args.checks else None

    def report(result):
        print(result.line(), flush=True)
        for f in result.failures:
            print(f"    {f}", flush=True)

    try:
        results = run_checks(args.level, seed, args.threads, names, config, report)
    except ValueError as exc:
        print(f"ctcm: {exc}", file=sys.stderr)
        return 2
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed", flush=True)
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctcm", description="Continuous-time centroid model simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="YAML experiment config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output path ('-' for stdout)")
        p.add_argument(
            "--threads", type=int, default=None,
            help=f"worker threads (default: ${THREADS_ENV} or the CPU count)",
        )

    p = sub.add_parser("simulate", help="run the configured ensembles and write the velocity table")
    common(p, config_required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("theory", help="stationary count law and expected velocity per grid point")
    common(p)
    p.add_argument("--n", type=int, nargs="+", help="site counts")
    p.add_argument("--theta-a", type=float, nargs="+", help="attach rates per second")
    p.add_argument("--theta-d", type=float, nargs="+", help="detach rates per second")
    p.add_argument("--eta-mean", type=float, nargs="+", help="perturbation mean (default 1 1)")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("validate", help="run the invariant and oracle battery")
    common(p)
    p.add_argument("--level", choices=("quick", "full"), default="quick")
    p.add_argument("--checks", help="comma-separated subset of checks to run")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", stream=sys.stderr)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"ctcm: invalid config: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"ctcm: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
