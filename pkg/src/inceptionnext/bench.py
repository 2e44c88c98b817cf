"""Wall-clock microbenchmarks for single layers and whole models."""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .conv import (
    dwconv2d,
    dwconv2d_backward,
    partial_dwconv,
    partial_dwconv_backward,
    pointwise,
    pointwise_backward,
)
from .errors import ConfigError
from .mixer import BranchConfig, inception_dwconv, inception_dwconv_backward, init_mixer_params
from .model import build_model, get_preset, model_forward
from .tensor import map_batch, seeded_random

CSV_HEADER = ("target", "batch", "iters", "median_ns", "p10_ns", "p90_ns", "img_per_s")
MAX_ELEMENTS = 1 << 28
MIN_ITERS = 10


@dataclass
class BenchResult:
    target: str
    batch: int
    warmup: int
    iters: int
    times_ns: list[int]
    output: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def median_ns(self) -> float:
        return float(statistics.median(self.times_ns))

    @property
    def p10_ns(self) -> float:
        return float(np.percentile(self.times_ns, 10))

    @property
    def p90_ns(self) -> float:
        return float(np.percentile(self.times_ns, 90))

    @property
    def img_per_s(self) -> float:
        return self.batch / (self.median_ns * 1e-9)

    def row(self) -> tuple:
        return (self.target, self.batch, self.iters, round(self.median_ns),
                round(self.p10_ns), round(self.p90_ns), round(self.img_per_s, 3))


def csv_rows(results, header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(CSV_HEADER)
    for r in results:
        writer.writerow(r.row())
    return buf.getvalue()


def time_callable(fn: Callable[[], object], target: str, batch: int,
                  warmup: int = 5, iters: int = 30) -> BenchResult:
    """Run ``fn`` ``warmup`` times untimed, then ``iters`` times, timing
    each call with the monotonic nanosecond clock."""
    if iters < MIN_ITERS:
        raise ConfigError(f"need at least {MIN_ITERS} timed iterations, got {iters}")
    out = None
    for _ in range(warmup):
        out = fn()
    times = []
    for _ in range(iters):
        start = time.perf_counter_ns()
        out = fn()
        times.append(time.perf_counter_ns() - start)
    return BenchResult(target, batch, warmup, iters, times, out)


def parse_layer_spec(spec: str) -> tuple[str, dict[str, str]]:
    """``"dwconv:k=11,C=96,HW=56"`` -> ("dwconv", {"k": "11", ...})."""
    kind, _, rest = spec.partition(":")
    opts = {}
    for item in filter(None, rest.split(",")):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"malformed option {item!r} in layer spec {spec!r}")
        opts[key.strip()] = value.strip()
    return kind.strip(), opts


LAYER_KINDS = ("dwconv", "inception", "pointwise", "partial")


def make_layer_fn(spec: str, batch: int, mode: str = "infer", seed: int = 0,
                  threads: Optional[int] = None) -> Callable[[], object]:
    """Build a zero-argument callable running one layer on seeded data.

    ``mode="train"`` runs forward then backward with a fixed upstream
    gradient.
    """
    kind, opts = parse_layer_spec(spec)
    known = {
        "dwconv": {"k", "kh", "kw", "C", "HW"},
        "inception": {"kb", "ks", "C", "HW", "ratio", "mode", "branches"},
        "pointwise": {"C", "Cout", "HW"},
        "partial": {"k", "C", "HW", "ratio"},
    }
    if kind not in known:
        raise ConfigError(f"unknown layer kind {kind!r}; choose from {LAYER_KINDS}")
    extra = set(opts) - known[kind]
    if extra:
        raise ConfigError(f"unknown options {sorted(extra)} for layer kind {kind!r}")
    if mode not in ("infer", "train"):
        raise ConfigError(f"unknown bench mode {mode!r}")
    c = int(opts.get("C", 96))
    hw = int(opts.get("HW", 56))
    if batch * c * hw * hw * 4 > MAX_ELEMENTS:
        raise ConfigError(f"layer input of {batch}x{c}x{hw}x{hw} exceeds the size guard")
    x = seeded_random((batch, c, hw, hw), seed, "normal")

    if kind == "dwconv":
        k = int(opts.get("k", 7))
        kh, kw = int(opts.get("kh", k)), int(opts.get("kw", k))
        w = seeded_random((c, kh, kw), seed + 1, "normal")
        b = seeded_random((c,), seed + 2, "normal")
        fwd = lambda t: dwconv2d(t, w, b)  # noqa: E731
        bwd = lambda t, g: dwconv2d_backward(t, w, g)  # noqa: E731
    elif kind == "inception":
        branches = opts.get("branches", "hw+w+h").split("+")
        cfg = BranchConfig(square_kernel=int(opts.get("ks", 3)), band_kernel=int(opts.get("kb", 11)),
                           branch_ratio=_ratio(opts.get("ratio", "1/8")),
                           square="hw" in branches, horizontal="w" in branches,
                           vertical="h" in branches, band_mode=opts.get("mode", "parallel"))
        params = init_mixer_params(c, cfg, seed=seed + 1)
        fwd = lambda t: inception_dwconv(t, params, cfg)  # noqa: E731
        bwd = lambda t, g: inception_dwconv_backward(t, params, cfg, g)  # noqa: E731
    elif kind == "pointwise":
        co = int(opts.get("Cout", 4 * c))
        w = seeded_random((co, c), seed + 1, "normal")
        b = seeded_random((co,), seed + 2, "normal")
        fwd = lambda t: pointwise(t, w, b)  # noqa: E731
        bwd = lambda t, g: pointwise_backward(t, w, g)  # noqa: E731
    else:
        k, ratio = int(opts.get("k", 3)), _ratio(opts.get("ratio", "1/4"))
        p = int(c * ratio)
        w = seeded_random((p, k, k), seed + 1, "normal")
        b = seeded_random((p,), seed + 2, "normal")
        fwd = lambda t: partial_dwconv(t, w, b, k, ratio)  # noqa: E731
        bwd = lambda t, g: partial_dwconv_backward(t, w, g, ratio)  # noqa: E731

    if mode == "infer":
        return lambda: map_batch(fwd, x, threads)
    out_shape = fwd(x[:1]).shape
    grad = seeded_random((batch, *out_shape[1:]), seed + 3, "normal")

    def train_step():
        y = map_batch(fwd, x, threads)
        return y, bwd(x, grad)

    return train_step


def _ratio(text: str) -> float:
    if "/" in text:
        num, den = text.split("/")
        return int(num) / int(den)
    return float(text)


def make_model_fn(preset: str, batch: int, input_size: int = 224, seed: int = 0,
                  threads: Optional[int] = None) -> Callable[[], np.ndarray]:
    cfg = get_preset(preset)
    if batch * cfg.dims[0] * 4 * (input_size // cfg.stem_kernel) ** 2 > MAX_ELEMENTS:
        raise ConfigError(f"model input batch={batch} size={input_size} exceeds the size guard")
    if input_size % cfg.total_stride:
        raise ConfigError(f"input size {input_size} is not divisible by the required stride {cfg.total_stride}")
    model = build_model(cfg, seed=seed)
    x = seeded_random((batch, cfg.in_channels, input_size, input_size), seed + 1, "normal")
    return lambda: model_forward(model, x, threads=threads)


def bench_layer(spec: str, batch: int = 1, warmup: int = 5, iters: int = 30,
                mode: str = "infer", seed: int = 0, threads: Optional[int] = None) -> BenchResult:
    fn = make_layer_fn(spec, batch, mode, seed, threads)
    target = spec if mode == "infer" else f"{spec}[train]"
    return time_callable(fn, target, batch, warmup, iters)


def bench_model(preset: str, batch: int = 1, warmup: int = 5, iters: int = 30,
                input_size: int = 224, seed: int = 0, threads: Optional[int] = None) -> BenchResult:
    fn = make_model_fn(preset, batch, input_size, seed, threads)
    return time_callable(fn, preset, batch, warmup, iters)
