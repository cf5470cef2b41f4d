"""Command-line front end.

    logshield run <experiment> [--config F] [--tp 1ms] [--mechanism gpt]
                  [--workload getpid-flood] [--trials N] [--seed S]
                  [--out DIR] [--trace] [--set key.path=value ...]
    logshield check
    logshield scenarios

Exit codes: 0 success, 1 invariant violation, 2 configuration error.
Every configurable field can be set from a file or from the command line
(``--set`` reaches anything the dedicated flags do not); flags win.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .config import ConfigError, EXPERIMENTS, apply_overrides, load_config


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="logshield",
                                description="deadline-bounded log protection simulator")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write artifacts")
    run.add_argument("experiment", choices=EXPERIMENTS)
    run.add_argument("--config", default=None, help="JSON config file")
    run.add_argument("--tp", default=None, help="timer period, e.g. 1ms, 500us")
    run.add_argument("--mechanism", default=None,
                     help="native-obs | in-memory | gpt | s2pt | memcpy | sync")
    run.add_argument("--workload", default=None)
    run.add_argument("--trials", type=int, default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default="./out", help="output directory")
    run.add_argument("--trace", action="store_true",
                     help="dump the full event trace (intended for short runs)")
    run.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY.PATH=VALUE",
                     help="override any config field; may repeat")

    sub.add_parser("check", help="run the invariant self-check suites")
    sub.add_parser("scenarios", help="list attack and workload presets")
    return p


def _effective_config(args):
    cfg = load_config(args.config)
    pairs = list(args.overrides)
    if args.tp is not None:
        pairs.append(f"experiment.tp={args.tp}")
    if args.mechanism is not None:
        pairs.append(f"experiment.mechanism={args.mechanism}")
    if args.workload is not None:
        pairs.append(f"experiment.workload={args.workload}")
        pairs.append(f"workload.name={args.workload}")
    if args.trials is not None:
        pairs.append(f"experiment.trials={args.trials}")
    if args.seed is not None:
        pairs.append(f"seed={args.seed}")
    pairs.append(f"experiment.experiment={args.experiment}")
    return apply_overrides(cfg, pairs)


def cmd_run(args) -> int:
    from .experiments import (run_deadline_cdf, run_tamper_study,
                              run_throughput, run_tradeoff_sweep)
    cfg = _effective_config(args)
    out = args.out
    if args.experiment == "deadline_cdf":
        result = run_deadline_cdf(cfg, out_dir=out, full_trace=args.trace)
        print(f"deadline_cdf: {result.fraction_within_tp * 100:.2f}% of "
              f"{result.log_delays.size} logs protected within the timer period; "
              f"max latency {result.max_epsilon} cycles")
    elif args.experiment == "tamper_study":
        study = run_tamper_study(cfg, out_dir=out, full_trace=args.trace)
        agg = study.aggregate()
        print(f"tamper_study: {len(study.trials)} trials, lost "
              f"min/avg/max = {agg['min']}/{agg['avg']:.1f}/{agg['max']} "
              f"of {study.trials[0].result.total_logs}")
    elif args.experiment == "throughput":
        rows = run_throughput(cfg, out_dir=out)
        for r in rows:
            tp = f"tp={r.tp_cycles}cyc" if r.tp_cycles else "tp=-"
            print(f"throughput: {r.mode:10s} {tp:14s} "
                  f"{r.logs_per_second:12.1f} logs/s  {r.relative_percent:6.2f}%")
    else:
        rows = run_tradeoff_sweep(cfg, out_dir=out)
        for r in rows:
            print(f"tradeoff: tp={r['tp']:>6s} throughput="
                  f"{r['logs_per_second']:.0f} logs/s "
                  f"({r['relative_percent']:.1f}%) lost max={r['lost_max']}")
    print(f"artifacts written to {out}")
    return 0


def cmd_check() -> int:
    from .checks import run_all
    return 0 if run_all() else 1


def cmd_scenarios() -> int:
    from .attacker import ATTACK_PRESETS
    from .pipeline import WORKLOAD_PRESETS
    print("attack presets:")
    for name in sorted(ATTACK_PRESETS):
        s = ATTACK_PRESETS[name]
        rng = f"{s.reported_range_ms[0]:g}-{s.reported_range_ms[1]:g}ms" \
            if s.reported_range_ms else "-"
        print(f"  {name:28s} total {s.total_ms:8.2f} ms  logs {s.total_logs:6d}"
              f"  reported {rng:14s} {s.description}")
    print("workload presets:")
    for name in sorted(WORKLOAD_PRESETS):
        w = WORKLOAD_PRESETS[name]
        print(f"  {name:28s} {w.total_rate:10.0f} logs/s")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "check":
            return cmd_check()
        return cmd_scenarios()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
