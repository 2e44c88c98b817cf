"""Latency of token mixers at equal shape: full k x k depthwise conv versus
the inception mixer with band kernel k, over a range of k."""

import argparse
import sys

from inceptionnext.bench import bench_layer, csv_rows


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--ks", default="3,7,11,15")
    p.add_argument("--C", type=int, default=96)
    p.add_argument("--HW", type=int, default=56)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--mode", choices=("infer", "train"), default="infer")
    args = p.parse_args()
    results = []
    for k in map(int, args.ks.split(",")):
        shape = f"C={args.C},HW={args.HW}"
        for spec in (f"dwconv:k={k},{shape}", f"inception:kb={k},{shape}"):
            results.append(bench_layer(spec, args.batch, warmup=3, iters=args.iters, mode=args.mode))
    sys.stdout.write(csv_rows(results))


if __name__ == "__main__":
    main()
