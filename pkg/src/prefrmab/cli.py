"""Command line: ``prefrmab run | sweep | regret-fit``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import harness
from .harness import ENVIRONMENTS, PRESETS, ExperimentConfig
from .policies import POLICIES
from .world import ConfigurationError


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", choices=ENVIRONMENTS, default="cpap")
    p.add_argument("--policy", choices=POLICIES, default="dopl")
    p.add_argument("--preset", choices=("paper", "desk"), default="desk")
    p.add_argument("-K", "--episodes", type=int, help="number of episodes (overrides the preset)")
    p.add_argument("-H", "--horizon", type=int, help="steps per episode (overrides the preset)")
    p.add_argument("--eps", type=float, help="confidence parameter in (0, 1)")
    p.add_argument("-B", "--budget", type=int, help="activations per step (overrides the environment)")
    p.add_argument("--reference", type=int, nargs=2, metavar=("ARM", "STATE"), default=(0, 0))
    p.add_argument("--accounting", choices=harness.ACCOUNTING, default="all_arms")
    p.add_argument("--benchmark", choices=harness.BENCHMARKS, default="lp")
    p.add_argument("--world-config", help="JSON world description for --env custom")
    p.add_argument("--no-diagnostics", action="store_true", help="skip oracle error columns")
    p.add_argument("-o", "--output", help=f"output directory (env {harness.OUTPUT_ENV_VAR} takes precedence)")


def _config(args, seed: int) -> ExperimentConfig:
    K, H, eps = PRESETS[args.env][args.preset]
    return ExperimentConfig(
        n_episodes=args.episodes or K,
        horizon=args.horizon or H,
        epsilon=args.eps if args.eps is not None else eps,
        seed=seed,
        reference_arm=args.reference[0],
        reference_state=args.reference[1],
        reward_accounting=args.accounting,
        budget=args.budget,
        benchmark=args.benchmark,
        diagnostics=not args.no_diagnostics,
        world_config=args.world_config,
    )


def cmd_run(args) -> int:
    cfg = _config(args, args.seed)
    out = harness.output_dir(args.output)
    dump = out / f"{args.env}_{args.policy}_seed{args.seed}_reference.jsonl" if args.dump_reference else None
    if dump is not None:
        out.mkdir(parents=True, exist_ok=True)
    logs, report, (csv_path, _) = harness.run_and_emit(args.env, args.policy, cfg, out, reference_dump=dump)
    final = np.mean([lg.episodic_reward for lg in logs[-max(len(logs) // 4, 1):]])
    print(f"{csv_path}  final-quartile reward {final:.2f}  "
          f"benchmark {cfg.horizon * report.benchmark_value:.2f}  cumulative regret {report.cumulative[-1]:.2f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args, args.seeds[0])
    out = harness.output_dir(args.output)
    agg = harness.sweep(args.env, args.policy, cfg, args.seeds, out, jobs=args.jobs)
    print(agg)
    return 0


def cmd_regret_fit(args) -> int:
    slopes = {}
    for path in args.csv:
        with open(path, newline="") as fh:
            cum = [float(row["cumulative_regret"]) for row in csv.DictReader(fh)]
        slopes[path] = harness.fit_loglog_slope(cum)
    if args.json:
        print(json.dumps(slopes, indent=2))
    else:
        for path, s in slopes.items():
            print(f"{path}\t{'n/a' if s is None else f'{s:.4f}'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prefrmab", description="Restless bandits with preference feedback.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="one experiment, one seed")
    _add_common(run)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--dump-reference", action="store_true", help="write the per-episode reference column")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="one experiment per seed plus an aggregate CSV")
    _add_common(sw)
    sw.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    sw.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sw.set_defaults(func=cmd_sweep)

    fit = sub.add_parser("regret-fit", help="log-log slope of cumulative regret from run CSVs")
    fit.add_argument("csv", nargs="+")
    fit.add_argument("--json", action="store_true")
    fit.set_defaults(func=cmd_regret_fit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
