"""Write the FLOPs-vs-kernel-size curve for depthwise and inception mixers as CSV."""

import argparse
import sys

from inceptionnext.complexity import curve_to_csv, flops_curve


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--kmax", type=int, default=31)
    p.add_argument("--C", type=int, default=96)
    p.add_argument("--HW", type=int, default=56)
    p.add_argument("--kinds", default="conventional,depthwise,inception")
    p.add_argument("-o", "--output", help="CSV path (default stdout)")
    args = p.parse_args()
    rows = flops_curve(args.kinds.split(","), range(3, args.kmax + 1, 2), args.C, args.HW, args.HW)
    text = curve_to_csv(rows)
    if args.output:
        with open(args.output, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
