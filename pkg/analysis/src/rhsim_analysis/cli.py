"""One entry point per figure family over finished run directories."""
from __future__ import annotations

import argparse
import glob
import os
import sys

from .bundle import load_bundles
from . import figures


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="rhsim-figures",
                                 description="render figures from run dirs")
    ap.add_argument("runs", nargs="+", help="run directories or globs")
    ap.add_argument("--out", default="figures", help="output directory")
    ap.add_argument("--xi", type=float, default=0.85,
                    help="robustness threshold fraction")
    ap.add_argument("--aggregate", help="sweep aggregate.csv for the contour")
    ap.add_argument("--formats", default="svg", help="comma-joined image formats")
    args = ap.parse_args(argv)

    run_dirs = []
    for pattern in args.runs:
        hits = sorted(glob.glob(pattern))
        run_dirs.extend(hits if hits else [pattern])
    bundles = load_bundles(run_dirs)
    if not bundles:
        print("no readable run directories", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    fmt = args.formats.split(",")[0]
    made = []
    got = figures.plot_performance(bundles, os.path.join(args.out, f"performance.{fmt}"),
                                   xi_fraction=args.xi)
    made += [got] if got else []
    for b in bundles:
        got = figures.plot_fleet_states(
            b, os.path.join(args.out, f"fleet_{b.strategy}_s{b.seed}.{fmt}"))
        made += [got] if got else []
    got = figures.plot_resilience_bars(bundles,
                                       os.path.join(args.out, f"resilience.{fmt}"))
    made += [got] if got else []
    got = figures.plot_tt_vs_distance(bundles,
                                      os.path.join(args.out, f"tt_distance.{fmt}"))
    made += [got] if got else []
    if args.aggregate:
        for strat in ("centralized", "decentralized", "marl"):
            got = figures.plot_noise_delay_contour(
                args.aggregate, os.path.join(args.out, f"contour_{strat}.{fmt}"),
                strategy=strat)
            made += [got] if got else []
    for m in made:
        print(m)
    return 0 if made else 1


if __name__ == "__main__":
    sys.exit(main())
