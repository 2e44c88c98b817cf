"""Ablation grids over mixer settings on the InceptionNeXt-T skeleton."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, replace
from typing import Optional

from .bench import bench_layer
from .complexity import count_model
from .errors import ConfigError
from .mixer import ABLATIONS, BranchConfig
from .model import DepthwiseMixerConfig, ModelConfig, get_preset

CSV_HEADER = ("variant", "params", "macs", "median_ns")

# Partial-channel depthwise variants of ConvNeXt-T: (kernel, conv_ratio).
CONVNEXT_PARTIAL = [(7, 1.0), (5, 1.0), (3, 1.0), (3, 1 / 2), (3, 3 / 8), (3, 1 / 4),
                    (3, 1 / 8), (3, 1 / 16)]


@dataclass
class AblationRow:
    variant: str
    config: ModelConfig
    params: int
    macs: int
    median_ns: Optional[float] = None

    def row(self) -> tuple:
        ns = "" if self.median_ns is None else round(self.median_ns)
        return (self.variant, self.params, self.macs, ns)


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _number(text: str) -> float:
    if "/" in text:
        num, den = text.split("/")
        return int(num) / int(den)
    return float(text)


_PARSERS = {"square_kernel": int, "band_kernel": int, "branch_ratio": _number,
            "square": _bool, "horizontal": _bool, "vertical": _bool, "band_mode": str}


def parse_grid(grid: str) -> list[tuple[str, BranchConfig]]:
    """``"band_kernel=7,11;branch_ratio=1/8,1/4"`` -> cartesian product of
    BranchConfig overrides, each labelled ``field=value,...``."""
    axes = []
    for part in filter(None, (p.strip() for p in grid.split(";"))):
        key, sep, values = part.partition("=")
        key = key.strip()
        if not sep or key not in _PARSERS:
            raise ConfigError(
                f"invalid grid entry {part!r}; fields are {sorted(_PARSERS)}"
            )
        try:
            parsed = [(v.strip(), _PARSERS[key](v.strip())) for v in values.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"invalid value in grid entry {part!r}: {exc}") from exc
        if not parsed:
            raise ConfigError(f"grid entry {part!r} has no values")
        axes.append([(key, text, value) for text, value in parsed])
    if not axes:
        raise ConfigError("empty grid")
    variants = []
    for combo in itertools.product(*axes):
        label = ",".join(f"{k}={t}" for k, t, _ in combo)
        variants.append((label, BranchConfig(**{k: v for k, _, v in combo})))
    return variants


def grid_variants(grid: str, base: str = "inceptionnext_t") -> list[tuple[str, ModelConfig]]:
    base_cfg = get_preset(base)
    if grid == "mixer-ablations":
        return [(name, replace(base_cfg, name=f"{base}/{name}", mixer=cfg))
                for name, cfg in ABLATIONS.items()]
    if grid == "convnext-partial":
        conv = get_preset("convnext_t_k7")
        return [(f"k{k}_ratio{ratio:g}", replace(conv, name=f"convnext_t_k{k}_r{ratio:g}",
                                                  mixer=DepthwiseMixerConfig(k, ratio)))
                for k, ratio in CONVNEXT_PARTIAL]
    return [(label, replace(base_cfg, name=f"{base}/{label}", mixer=cfg))
            for label, cfg in parse_grid(grid)]


def run_ablation(grid: str = "mixer-ablations", speed: bool = True, batch: int = 1, hw: int = 56,
                 warmup: int = 2, iters: int = 10, threads: Optional[int] = None) -> list[AblationRow]:
    """Params/MACs of every variant at 224x224, plus (optionally) the median
    latency of the variant's stage-1 token mixer at ``hw`` x ``hw``."""
    rows = []
    for label, cfg in grid_variants(grid):
        report = count_model(cfg, (1, 3, 224, 224))
        row = AblationRow(label, cfg, report.total_params, report.total_macs)
        if speed:
            row.median_ns = bench_layer(_mixer_spec(cfg, hw), batch=batch, warmup=warmup,
                                        iters=iters, threads=threads).median_ns
        rows.append(row)
    return rows


def _mixer_spec(cfg: ModelConfig, hw: int = 56) -> str:
    c = cfg.dims[0]
    m = cfg.mixer
    if isinstance(m, DepthwiseMixerConfig):
        if m.conv_ratio == 1.0:
            return f"dwconv:k={m.kernel},C={c},HW={hw}"
        return f"partial:k={m.kernel},C={c},HW={hw},ratio={m.conv_ratio!r}"
    branches = "+".join(b for b, on in (("hw", m.square), ("w", m.horizontal), ("h", m.vertical)) if on)
    return (f"inception:kb={m.band_kernel},ks={m.square_kernel},C={c},HW={hw},"
            f"ratio={m.branch_ratio!r},mode={m.band_mode},branches={branches}")


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow(r.row())
    return buf.getvalue()

