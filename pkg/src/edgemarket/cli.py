"""Command-line front end: simulate, train, compare, gen-trace."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .renewal import RenewalAgent


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="market config file")
    p.add_argument("--seed", type=int, default=None, help="override market.seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgemarket",
        description="Hybrid futures/spot edge-resource market simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one method, write metrics CSV")
    _add_common(sim)
    sim.add_argument("--method", required=True, choices=harness.METHODS)
    sim.add_argument("--runs", type=int, default=None, help="override market.runs")
    sim.add_argument("--out", required=True)
    sim.add_argument("--snapshot", default=None, help="trained policy for oh-trust")
    sim.add_argument("--rt-clock", choices=("off", "wall"), default="off",
                     help="off keeps outputs byte-reproducible; wall measures "
                          "online decision latency")

    tr = sub.add_parser("train", help="train the renewal policy, write a snapshot")
    _add_common(tr)
    tr.add_argument("--episodes", type=int, default=None, help="override rl.episodes")
    tr.add_argument("--out", required=True)

    cmp_ = sub.add_parser("compare", help="run several methods, write metrics CSV")
    _add_common(cmp_)
    cmp_.add_argument("--methods", default=",".join(harness.METHODS),
                      help="comma-separated method list")
    cmp_.add_argument("--runs", type=int, default=None)
    cmp_.add_argument("--out", required=True)
    cmp_.add_argument("--snapshot", default=None)
    cmp_.add_argument("--rt-clock", choices=("off", "wall"), default="wall")

    gen = sub.add_parser("gen-trace", help="write a synthetic demand trace CSV")
    gen.add_argument("--buyers", type=int, required=True)
    gen.add_argument("--days", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    return parser


def _load(args) -> harness.MarketConfig:
    config = harness.load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "runs", None) is not None:
        config = replace(config, runs=args.runs)
    return config


def _agent_for(config, snapshot: str | None, methods) -> RenewalAgent | None:
    if "oh-trust" not in methods:
        return None
    if snapshot:
        return RenewalAgent.load(snapshot, config.rl)
    agent, _ = harness.train_agent(config)
    return agent


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-trace":
            trace = harness.generate_trace(args.buyers, args.days, args.seed)
            harness.save_trace(trace, args.out)
            print(f"wrote {args.days} days x {args.buyers} buyers to {args.out}")
            return 0

        config = _load(args)
        if args.command == "train":
            if args.episodes is not None:
                config = replace(config, rl=replace(config.rl, episodes=args.episodes))
            agent, trace = harness.train_agent(config)
            agent.save(args.out)
            tail = trace[-min(5, len(trace)):]
            print(f"trained {len(trace)} episodes; last rewards: "
                  + ", ".join(f"{r:.1f}" for r in tail))
            print(f"snapshot written to {args.out}")
            return 0

        measure = args.rt_clock == "wall"
        if args.command == "simulate":
            methods = [args.method]
        else:
            methods = [m.strip() for m in args.methods.split(",") if m.strip()]
            for m in methods:
                if m not in harness.METHODS:
                    raise harness.ConfigError(
                        f"unknown method '{m}' (choose from {harness.METHODS})")
        agent = _agent_for(config, args.snapshot, methods)
        rows = {}
        for method in methods:
            _agg, method_rows = harness.run_monte_carlo(config, method, agent, measure)
            rows[method] = method_rows
        Path(args.out).write_text(harness.format_rows(rows))
        print(f"wrote {sum(len(r) for r in rows.values())} rows to {args.out}")
        return 0
    except (harness.ConfigError, harness.TraceError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
