"""Command line entry point: ``blendopt {run,sweep,churn,bounds,gen}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .experiments import RunError, bound_reports, build_problem, churn_scenario, parse_events, run, sweep


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = cfg.with_value("output.dir", args.out)
    cfg.validate()
    return cfg


def _cmd_run(cfg, args):
    res = run(cfg, out=cfg.output_dir)
    (Path(cfg.output_dir) / "config.txt").write_text(dump_config(cfg))
    for name, r in res.results.items():
        rate = "n/a" if r.rate is None else f"{r.rate.rate:.6g}" + ("" if r.rate.trusted else " (untrusted)")
        print(f"{name}: final error {r.final_error:.3e}, rate {rate}")
    print(f"outputs in {cfg.output_dir}")


def _cmd_sweep(cfg, args):
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise RunError("--values is empty")
    table = sweep(cfg, args.param, values, out=cfg.output_dir)
    failed = 0
    for v, res in table:
        for name, r in res.items():
            if r.ok:
                rate = "n/a" if r.rate is None else f"{r.rate.rate:.6g}"
                print(f"{args.param}={v:g} {name}: rate {rate}, final error {r.final_error:.3e}")
            else:
                failed += 1
                print(f"{args.param}={v:g} {name}: {r.status}")
    print(f"sweep table in {Path(cfg.output_dir) / 'sweep.csv'}" + (f" ({failed} failed runs)" if failed else ""))


def _cmd_churn(cfg, args):
    if args.events is not None:
        cfg = cfg.with_value("churn.events", args.events)
    events = parse_events(cfg.churn.events)
    res = churn_scenario(cfg, events, out=cfg.output_dir)
    for name, r in res.items():
        print(f"{name}: final error {r.final_error:.3e} against the current minimizer")
    print(f"outputs in {cfg.output_dir}")


def _cmd_bounds(cfg, args):
    graph, ens = build_problem(cfg)
    text = bound_reports(cfg, graph, ens)
    if args.out is not None:
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.output_dir) / "bounds.txt").write_text(text)
    sys.stdout.write(text)


def _cmd_gen(cfg, args):
    graph, ens = build_problem(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ens.save(out / "ensemble.txt")
    graph.save(out / "graph.edgelist")
    print(f"wrote {out / 'ensemble.txt'} and {out / 'graph.edgelist'}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="sets problem, graph and initial-condition seeds")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="blendopt", description="PI-coupled distributed optimization simulator")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run all configured algorithms")
    sw = sub.add_parser("sweep", parents=[common], help="one run per value of a numeric config key")
    sw.add_argument("--param", required=True, help="dotted config key, e.g. gains.beta")
    sw.add_argument("--values", required=True, help="comma separated values")
    ch = sub.add_parser("churn", parents=[common], help="join/leave scenario")
    ch.add_argument("--events", help="e.g. '25 leave 3; 40 join 3' (1-based agents)")
    sub.add_parser("bounds", parents=[common], help="print the gain-bound report")
    sub.add_parser("gen", parents=[common], help="write the ensemble and graph files")
    return p


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "churn": _cmd_churn, "bounds": _cmd_bounds, "gen": _cmd_gen}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, RunError, OSError, ValueError, RuntimeError) as exc:
        print(f"blendopt {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
