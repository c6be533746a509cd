"""Command-line entry points: ``run``, ``summarize``, ``estimate-survival``."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .config import ConfigError, load_config
from .dps import survival_estimate


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zenolgt",
        description="Monitored lattice-gauge-theory trajectory simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a run configuration")
    p_run.add_argument("config", help="path to a JSON run configuration")
    p_run.add_argument("--seed", type=int, default=None, help="override master seed")
    p_run.add_argument("--workers", type=int, default=None, help="override workers")
    p_run.add_argument("--out", default=None, help="override output directory")

    p_sum = sub.add_parser("summarize", help="tabulate runs under a directory")
    p_sum.add_argument("dir", help="directory containing run outputs")

    p_est = sub.add_parser(
        "estimate-survival",
        help="closed-form survival probability of the monitored evolution",
    )
    p_est.add_argument("--lambda", dest="lam", type=float, required=True,
                       help="coherent error strength (units of J)")
    p_est.add_argument("--dtm", type=float, required=True,
                       help="measurement period (units of 1/J)")
    p_est.add_argument("--n", type=int, required=True, help="number of charges")
    p_est.add_argument("--t", type=float, required=True, help="evolution time")
    p_est.add_argument("--fidelity", type=float, default=1.0,
                       help="measurement fidelity (default ideal)")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            from . import runner

            config = load_config(args.config)
            overrides = {}
            if args.seed is not None:
                overrides["master_seed"] = args.seed
            if args.workers is not None:
                overrides["workers"] = args.workers
            if args.out is not None:
                overrides["output"] = dataclasses.replace(
                    config.output, dir=args.out
                )
            if overrides:
                config = dataclasses.replace(config, **overrides)
            summary = runner.run(config)
            frac = (
                f"{summary.surviving_fraction:.4f}"
                if summary.surviving_fraction is not None
                else "-"
            )
            print(
                f"{summary.protocol}: {summary.n_trajectories} trajectories, "
                f"surviving fraction {frac}, outputs in {summary.output_dir} "
                f"({summary.wall_time_s:.1f}s)"
            )
            return 0
        if args.command == "summarize":
            from . import runner

            print(runner.summarize(args.dir))
            return 0
        if args.command == "estimate-survival":
            try:
                value = survival_estimate(
                    args.lam, args.dtm, args.n, args.t, args.fidelity
                )
            except ValueError as exc:
                print(f"invalid arguments: {exc}", file=sys.stderr)
                return 2
            print(f"{value:.10f}")
            return 0
        parser.error(f"unknown command {args.command}")
        return 2
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
