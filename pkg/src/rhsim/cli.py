"""Command-line entry points: run scenarios, train the MARL policy, sweep
uncertainty grids, and summarize finished runs."""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_PARTIAL = 4

OUTPUT_ROOT_ENV = "RHSIM_OUTPUT_ROOT"


def _out_root(args) -> str:
    return args.out or os.environ.get(OUTPUT_ROOT_ENV, "runs")


def _load_config(args):
    from .engine import ConfigError, ScenarioConfig, desk_scenario, paper_scenario

    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        cfg = ScenarioConfig.load_json(args.config)
    elif args.scenario == "paper":
        cfg = paper_scenario()
    else:
        cfg = desk_scenario()
    if args.strategy:
        cfg.strategy = args.strategy
    if args.seed is not None:
        cfg.seed = args.seed
    if args.noise is not None:
        cfg.operator.noise_p = args.noise
    if args.delay is not None:
        cfg.operator.response_delay_s = args.delay * 60.0
        if cfg.disruption:
            cfg.disruption.response_delay_s = args.delay * 60.0
    if getattr(args, "no_disruption", False):
        cfg.disruption = None
    errors = cfg.validate()
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="scenario config JSON")
    p.add_argument("--scenario", choices=["desk", "paper"], default="desk",
                   help="built-in scenario preset when no --config is given")
    p.add_argument("--strategy",
                   choices=["none", "random", "centralized", "decentralized",
                            "marl"],
                   help="rebalancing strategy key")
    p.add_argument("--seed", type=int, help="master RNG seed")
    p.add_argument("--noise", type=float, help="demand prediction noise p")
    p.add_argument("--delay", type=float,
                   help="operator response delay, minutes")
    p.add_argument("--out", help=f"output root (default ${OUTPUT_ROOT_ENV} or ./runs)")


def cmd_run(args) -> int:
    from .engine import MaddpgPolicy, run

    cfg = _load_config(args)
    policy = None
    if cfg.strategy == "marl":
        if not args.checkpoint:
            print("strategy marl requires --checkpoint", file=sys.stderr)
            return EXIT_CONFIG
        policy = MaddpgPolicy.load(args.checkpoint, cfg.marl)
    run_dir = args.run_dir or os.path.join(
        _out_root(args), f"{cfg.strategy}-s{cfg.seed}-{cfg.config_hash()[:8]}")
    report = run(cfg, run_dir=run_dir, marl_policy=policy)
    print(f"run complete: {run_dir}")
    print(f"  completed users    : {report.completed_users}")
    print(f"  mean wait          : {report.mean_wait_s:.1f} s")
    print(f"  mean pickup wait   : {report.mean_postmatch_wait_s:.1f} s")
    if report.resilience:
        print(f"  resilience R       : {report.resilience['R']:.4f}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .engine import train_marl

    cfg = _load_config(args)
    cfg.strategy = "marl"
    out_dir = args.run_dir or os.path.join(_out_root(args), "marl-training")
    policy, curve = train_marl(cfg, sessions=args.sessions, out_dir=out_dir,
                               checkpoint_every=args.checkpoint_every,
                               resume=not args.fresh)
    print(f"trained {len(curve)} sessions; checkpoint in {out_dir}")
    if curve:
        tail = np.mean([c[1] for c in curve[-max(len(curve) // 5, 1):]])
        print(f"  final-quintile mean reward: {tail:.3f}")
    return EXIT_OK


def _sweep_cell(payload):
    """One (strategy, p, delay, seed) cell; returns a row dict or an error."""
    from .engine import MaddpgPolicy, run

    cfg_dict, strategy, p, delay_min, seed, baseline, run_dir, ckpt = payload
    from .engine import ScenarioConfig
    cfg = ScenarioConfig.from_dict(cfg_dict)
    cfg.strategy = strategy
    cfg.seed = seed
    cfg.operator.noise_p = p
    cfg.operator.response_delay_s = delay_min * 60.0
    if cfg.disruption:
        cfg.disruption.response_delay_s = delay_min * 60.0
    cfg.baseline_travel_time_s = baseline
    policy = MaddpgPolicy.load(ckpt, cfg.marl) if strategy == "marl" else None
    try:
        rep = run(cfg, run_dir=run_dir, marl_policy=policy)
    except Exception as exc:   # sweep keeps going; cell is recorded as failed
        return {"strategy": strategy, "p": p, "delay": delay_min, "seed": seed,
                "error": f"{type(exc).__name__}: {exc}"}
    r = rep.resilience or {}
    return {"strategy": strategy, "p": p, "delay": delay_min, "seed": seed,
            "R1": r.get("R1"), "R2": r.get("R2"), "R3": r.get("R3"),
            "R4": r.get("R4"), "R": r.get("R"),
            "mean_wait_s": rep.mean_postmatch_wait_s}


def cmd_sweep(args) -> int:
    from .engine import run

    cfg = _load_config(args)
    strategies = args.strategies.split(",")
    noises = [float(x) for x in args.noises.split(",")]
    delays = [float(x) for x in args.delays.split(",")]
    seeds = [int(x) for x in args.seeds.split(",")]
    if "marl" in strategies and not args.checkpoint:
        print("sweep with marl requires --checkpoint", file=sys.stderr)
        return EXIT_CONFIG
    root = args.run_dir or os.path.join(_out_root(args), "sweep")
    os.makedirs(root, exist_ok=True)

    # nominal baselines per (strategy, seed): independent of noise and delay
    baselines = {}
    for strategy, seed in itertools.product(strategies, seeds):
        cfg_b = replace(cfg, strategy=strategy, seed=seed, disruption=None,
                        record_region_traffic=False, baseline_travel_time_s=0.0)
        policy = None
        if strategy == "marl":
            from .engine import MaddpgPolicy
            policy = MaddpgPolicy.load(args.checkpoint, cfg.marl)
        rep = run(cfg_b, marl_policy=policy)
        baselines[(strategy, seed)] = rep.mean_travel_time_s

    cells = []
    for strategy, p, delay, seed in itertools.product(strategies, noises,
                                                      delays, seeds):
        run_dir = os.path.join(
            root, f"{strategy}-p{p:g}-d{delay:g}-s{seed}") if args.keep_runs \
            else None
        cells.append((cfg.to_dict(), strategy, p, delay, seed,
                      baselines[(strategy, seed)], run_dir, args.checkpoint))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]

    agg = os.path.join(root, "aggregate.csv")
    fields = ["strategy", "p", "delay", "seed", "R1", "R2", "R3", "R4", "R",
              "mean_wait_s"]
    failures = [r for r in rows if "error" in r]
    with open(agg, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            if "error" not in r:
                w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v)
                            for k, v in r.items()})
    if failures:
        with open(os.path.join(root, "failures.json"), "w") as fh:
            json.dump(failures, fh, indent=1)
        print(f"sweep finished with {len(failures)} failed cells -> {agg}")
        return EXIT_PARTIAL
    print(f"sweep complete: {len(rows)} cells -> {agg}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for d in args.run_dirs:
        man = os.path.join(d, "manifest.json")
        res = os.path.join(d, "resilience.json")
        if not os.path.exists(man):
            print(f"skipping {d}: no manifest", file=sys.stderr)
            continue
        with open(man) as fh:
            m = json.load(fh)
        r = {}
        if os.path.exists(res):
            with open(res) as fh:
                r = json.load(fh)
        rows.append((d, m["config"]["strategy"], m["seed"],
                     m["config"]["operator"]["noise_p"], r.get("R")))
    print(f"{'run':40s} {'strategy':14s} {'seed':>4s} {'p':>5s} {'R':>8s}")
    for d, strat, seed, p, R in rows:
        rs = f"{R:.4f}" if isinstance(R, (int, float)) else "-"
        print(f"{d[:40]:40s} {strat:14s} {seed:4d} {p:5.2f} {rs:>8s}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rhsim",
        description="Multi-modal transport simulator with RH rebalancing")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    _add_common(p_run)
    p_run.add_argument("--run-dir", help="explicit output directory")
    p_run.add_argument("--checkpoint", help="MARL checkpoint for strategy marl")
    p_run.add_argument("--no-disruption", action="store_true",
                       help="drop the disruption from the scenario")
    p_run.set_defaults(fn=cmd_run)

    p_train = sub.add_parser("train", help="train the MARL policy")
    _add_common(p_train)
    p_train.add_argument("--sessions", type=int, default=600)
    p_train.add_argument("--checkpoint-every", type=int, default=50)
    p_train.add_argument("--run-dir", help="training output directory")
    p_train.add_argument("--fresh", action="store_true",
                         help="ignore an existing checkpoint")
    p_train.set_defaults(fn=cmd_train)

    p_sweep = sub.add_parser("sweep", help="noise x delay x strategy grid")
    _add_common(p_sweep)
    p_sweep.add_argument("--strategies",
                         default="none,random,centralized,decentralized")
    p_sweep.add_argument("--noises", default="0,0.05,0.1,0.15,0.2")
    p_sweep.add_argument("--delays", default="0,10,20,30",
                         help="response delays in minutes")
    p_sweep.add_argument("--seeds", default="0,1,2,3,4")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--checkpoint", help="MARL checkpoint")
    p_sweep.add_argument("--keep-runs", action="store_true",
                         help="write full output bundles per cell")
    p_sweep.add_argument("--run-dir", help="sweep output directory")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_rep = sub.add_parser("report", help="summarize finished run directories")
    p_rep.add_argument("run_dirs", nargs="+")
    p_rep.set_defaults(fn=cmd_report)

    args = parser.parse_args(argv)
    from .engine import ConfigError, InvariantError
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantError as exc:
        print(f"runtime invariant violation: {exc}", file=sys.stderr)
        traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
