"""Mixer ablation grid: params, MACs and stage-1 mixer latency per variant."""

import argparse
import sys

from inceptionnext.ablation import rows_to_csv, run_ablation


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--grid", default="mixer-ablations")
    p.add_argument("--no-speed", action="store_true")
    p.add_argument("--iters", type=int, default=10)
    args = p.parse_args()
    rows = run_ablation(args.grid, speed=not args.no_speed, iters=args.iters)
    sys.stdout.write(rows_to_csv(rows))


if __name__ == "__main__":
    main()
