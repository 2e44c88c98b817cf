"""Command-line front end.

Subcommands: flops, count, bench, forward, gradcheck, ablate.
Exit codes: 0 success, 1 failed check, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import ablation, bench, complexity
from .errors import ConfigError, ShapeError, UnsupportedTargetError, WeightFileError
from .gradcheck import TARGETS, run_gradcheck
from .model import ModelConfig, build_model, get_preset, model_forward
from .tensor import THREADS_ENV, checksum, default_threads, seeded_random
from .weights import load_weights

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _k_range(text: str) -> list[int]:
    parts = [int(p) for p in text.split(":")]
    if len(parts) == 1:
        return parts
    if len(parts) == 2:
        start, stop, step = parts[0], parts[1], 2
    elif len(parts) == 3:
        start, stop, step = parts
    else:
        raise argparse.ArgumentTypeError(f"bad kernel range {text!r}; use start:stop[:step]")
    return list(range(start, stop + 1, step))


def _load_config(args) -> ModelConfig:
    if getattr(args, "config", None):
        with open(args.config) as f:
            return ModelConfig.from_dict(json.load(f))
    return get_preset(args.model)


def cmd_flops(args, out) -> int:
    if args.curve:
        kinds = [k.strip() for k in args.curve.split(",") if k.strip()]
        for kind in kinds:
            if kind not in complexity.KINDS:
                raise ConfigError(f"unknown curve kind {kind!r}; choose from {complexity.KINDS}")
        rows = complexity.flops_curve(kinds, args.k, args.C, args.HW, args.HW)
        out.write(complexity.curve_to_csv(rows))
        return EXIT_OK
    cfg = _load_config(args)
    report = complexity.count_model(cfg, (1, cfg.in_channels, args.input, args.input))
    out.write(json.dumps({"model": cfg.name, **report.to_dict(per_layer=False)}, indent=2) + "\n")
    return EXIT_OK


def cmd_count(args, out) -> int:
    if args.kind:
        report = complexity.count_layer(args.kind, args.k, args.C, args.HW, args.HW)
        analytic_params, analytic_flops = complexity.analytic_conv_cost(args.kind, args.k, args.C, args.HW, args.HW)
        d = report.to_dict()
        d["analytic"] = {"params": analytic_params, "flops": analytic_flops}
        out.write(json.dumps(d, indent=2) + "\n")
        return EXIT_OK
    cfg = _load_config(args)
    report = complexity.count_model(cfg, (1, cfg.in_channels, args.input, args.input))
    out.write(json.dumps({"model": cfg.name, **report.to_dict()}, indent=2) + "\n")
    return EXIT_OK


def cmd_bench(args, out) -> int:
    if args.layer:
        result = bench.bench_layer(args.layer, args.batch, args.warmup, args.iters,
                                   args.mode, args.seed, args.threads)
    else:
        if args.mode != "infer":
            raise UnsupportedTargetError("train mode is only available for layer targets")
        result = bench.bench_model(args.model, args.batch, args.warmup, args.iters,
                                   args.input, args.seed, args.threads)
    out.write(bench.csv_rows([result], header=not args.no_header))
    return EXIT_OK


def cmd_forward(args, out) -> int:
    cfg = _load_config(args) if not args.weights else None
    if cfg is not None and args.input % cfg.total_stride:
        raise ShapeError(
            f"input size {args.input} is not divisible by the required stride {cfg.total_stride}"
        )
    model = load_weights(args.weights) if args.weights else build_model(cfg, seed=args.seed)
    x = seeded_random((args.batch, model.cfg.in_channels, args.input, args.input),
                      args.seed + 1, "normal")
    logits = model_forward(model, x, threads=args.threads)
    top5 = np.argsort(-logits, axis=1, kind="stable")[:, :5]
    out.write(f"checksum {checksum(logits)}\n")
    for row in top5:
        out.write("top5 " + ",".join(str(int(i)) for i in row) + "\n")
    return EXIT_OK


def cmd_gradcheck(args, out) -> int:
    result = run_gradcheck(args.target, args.seed, args.eps, args.tolerance)
    for name, err in result.errors.items():
        out.write(f"{name}\t{err:.3e}\n")
    status = "PASS" if result.passed else "FAIL"
    out.write(f"{status} {result.target} max_rel_err={result.max_error:.3e} tol={result.tolerance:g}\n")
    return EXIT_OK if result.passed else EXIT_FAIL


def cmd_ablate(args, out) -> int:
    rows = ablation.run_ablation(args.grid, speed=not args.no_speed, batch=args.batch,
                                 hw=args.HW, warmup=args.warmup, iters=args.iters,
                                 threads=args.threads)
    out.write(ablation.rows_to_csv(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inceptionnext", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def model_args(p, required=False):
        g = p.add_mutually_exclusive_group(required=required)
        g.add_argument("--model", help="preset name")
        g.add_argument("--config", help="JSON model config file")
        p.add_argument("--input", type=int, default=224, help="input height/width")

    def thread_arg(p):
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (default ${THREADS_ENV} or 1)")

    p = sub.add_parser("flops", help="analytic FLOPs curves or model totals")
    p.add_argument("--curve", help="comma-separated kinds, e.g. depthwise,inception")
    p.add_argument("--k", type=_k_range, default=_k_range("3:31:2"), help="start:stop[:step]")
    p.add_argument("--C", type=int, default=96)
    p.add_argument("--HW", type=int, default=56)
    model_args(p)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("count", help="per-layer parameter/MAC report")
    model_args(p)
    p.add_argument("--kind", choices=complexity.KINDS, help="count one isolated layer instead")
    p.add_argument("--k", type=int, default=11)
    p.add_argument("--C", type=int, default=96)
    p.add_argument("--HW", type=int, default=56)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("bench", help="median-latency microbenchmark")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--layer", help="e.g. dwconv:k=11,C=96,HW=56 or inception:kb=11,C=96,HW=56")
    g.add_argument("--model", help="preset name")
    p.add_argument("--input", type=int, default=224)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--mode", choices=("infer", "train"), default="infer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-header", action="store_true")
    thread_arg(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("forward", help="logits checksum and top-5 classes")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--model", help="preset name")
    g.add_argument("--config", help="JSON model config file")
    g.add_argument("--weights", help="weight container to load")
    p.add_argument("--input", type=int, default=224)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    thread_arg(p)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--target", required=True, help=f"one of {', '.join(TARGETS)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="params/MACs/latency over mixer variants")
    p.add_argument("--grid", default="mixer-ablations",
                   help="mixer-ablations, convnext-partial, or field=v1,v2;field=...")
    p.add_argument("--no-speed", action="store_true", help="skip the latency column")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--HW", type=int, default=56)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--iters", type=int, default=10)
    thread_arg(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    needs_model = args.command in ("flops", "count") and not (
        getattr(args, "curve", None) or getattr(args, "kind", None))
    if needs_model and not (args.model or args.config):
        parser.error(f"{args.command}: give --model or --config")
    if getattr(args, "threads", None) is None and hasattr(args, "threads"):
        try:
            args.threads = default_threads()
        except ValueError as exc:
            parser.error(str(exc))
    try:
        return args.func(args, out)
    except (ConfigError, ShapeError, UnsupportedTargetError, WeightFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
