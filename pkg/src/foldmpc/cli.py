"""Command-line scenario runner: ``foldmpc hover`` and ``foldmpc square``."""
from __future__ import annotations

import argparse
import dataclasses
import sys

from .config import load_config
from .harness import ScenarioError, compute_metrics, parse_schedule, run_scenario, write_metrics


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="foldmpc", description="Closed-loop simulation of the foldable quadrotor.")
    sub = ap.add_subparsers(dest="scenario", required=True)
    for name, help_text in (("hover", "hover at a fixed point while reforming"),
                            ("square", "fly a square while reforming at each corner")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="configuration file")
        p.add_argument("--duration", type=float, help="simulated time, s")
        p.add_argument("--seed", type=int, help="noise seed")
        p.add_argument("--out", help="CSV trace path (default: stdout summary only)")
        p.add_argument("--schedule", help="formation schedule, e.g. 0:X,15:H,30:Y,45:T")
        p.add_argument("--noise", type=float, help="noise scale factor (0 disables noise)")
        p.add_argument("--metrics", help="metrics report path")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, scenario=args.scenario)
        if args.duration is not None:
            cfg.duration = args.duration
        if args.seed is not None:
            cfg.seed = args.seed
        if args.schedule:
            cfg.formation_schedule = parse_schedule(args.schedule)
        if args.noise is not None:
            cfg.noise = dataclasses.replace(cfg.noise, scale=args.noise)
        cfg.out = args.out
        cfg.validate()
    except (ValueError, OSError) as exc:
        print(f"foldmpc: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        trace = run_scenario(cfg)
    except ScenarioError as exc:
        print(f"foldmpc: simulation failed at {exc}", file=sys.stderr)
        return 1
    metrics = compute_metrics(trace, cfg)
    if args.metrics:
        write_metrics(metrics, args.metrics)
    sys.stdout.write(metrics.report())
    return 0


if __name__ == "__main__":
    sys.exit(main())
