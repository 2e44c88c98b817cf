"""Params and MACs of every preset at 224x224."""

import argparse
import csv
import sys

from inceptionnext.complexity import count_model
from inceptionnext.model import PRESETS


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--input", type=int, default=224)
    args = p.parse_args()
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["model", "params", "params_M", "macs", "macs_G"])
    for name, cfg in PRESETS.items():
        r = count_model(cfg, (1, 3, args.input, args.input))
        writer.writerow([name, r.total_params, f"{r.total_params / 1e6:.2f}",
                         r.total_macs, f"{r.total_macs / 1e9:.2f}"])


if __name__ == "__main__":
    main()
