"""Parameter and multiply-accumulate accounting.

Two independent routes: closed-form costs for a single conv layer, and a
walker that counts the arrays actually held by a model (or an isolated
layer) and derives MACs from tensor shapes. FLOPs are 2 * MACs for conv and
linear layers; norms, activations, pooling and residual adds cost nothing.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

from .conv import ConvSpec
from .errors import ConfigError, ShapeError
from .mixer import BranchConfig, init_mixer_params
from .model import DepthwiseMixerConfig, Model, ModelConfig, NormParams, build_model

KINDS = ("conventional", "depthwise", "inception")


def _exact(value: Fraction):
    return int(value) if value.denominator == 1 else float(value)


def analytic_conv_cost(kind: str, k: int, c: int, h: int, w: int):
    """Closed-form (params, flops) of a stride-1 C -> C conv, bias excluded.

    ``inception`` assumes a 3x3 square branch, branch ratio 1/8 and band
    kernel size ``k``.
    """
    if min(k, c, h, w) <= 0:
        raise ValueError(f"dimensions must be positive, got k={k} C={c} H={h} W={w}")
    if kind == "conventional":
        params = Fraction(k * k * c * c)
        flops = 2 * params * h * w
    elif kind == "depthwise":
        params = Fraction(k * k * c)
        flops = 2 * params * h * w
    elif kind == "inception":
        params = Fraction((2 * k + 9) * c, 8)
        flops = Fraction((2 * k + 9) * c * h * w, 4)
    else:
        raise ValueError(f"unknown conv kind {kind!r}; expected one of {KINDS}")
    return _exact(params), _exact(flops)


@dataclass
class LayerCost:
    name: str
    kind: str
    params_with_bias: int
    params_no_bias: int
    macs: int
    flops: int = field(init=False)

    def __post_init__(self):
        self.flops = 2 * self.macs


@dataclass
class ComplexityReport:
    entries: list[LayerCost]
    input_shape: tuple[int, ...]

    @property
    def total_params(self) -> int:
        return sum(e.params_with_bias for e in self.entries)

    @property
    def total_params_no_bias(self) -> int:
        return sum(e.params_no_bias for e in self.entries)

    @property
    def total_macs(self) -> int:
        return sum(e.macs for e in self.entries)

    @property
    def total_flops(self) -> int:
        return sum(e.flops for e in self.entries)

    def totals(self) -> dict:
        return {"params": self.total_params, "params_no_bias": self.total_params_no_bias,
                "macs": self.total_macs, "flops": self.total_flops}

    def to_dict(self, per_layer: bool = True) -> dict:
        d = {"input_shape": list(self.input_shape), "totals": self.totals()}
        if per_layer:
            d["layers"] = [asdict(e) for e in self.entries]
        return d

    def to_json(self, per_layer: bool = True, **kwargs) -> str:
        return json.dumps(self.to_dict(per_layer), **kwargs)


def _conv_cost(name, weight, bias, out_hw, kind="conv") -> LayerCost:
    w = int(np.size(weight))
    b = int(np.size(bias)) if bias is not None else 0
    return LayerCost(name, kind, w + b, w, w * out_hw[0] * out_hw[1])


def _norm_cost(name, norm: NormParams) -> LayerCost:
    # running mean/var are buffers, not parameters
    return LayerCost(name, "norm", int(norm.weight.size + norm.bias.size), int(norm.weight.size), 0)


def _mixer_cost(name, params, hw) -> LayerCost:
    """Depthwise stride-1 mixers: one MAC per weight per output pixel."""
    if hasattr(params, "arrays"):
        arrays = list(params.arrays())
    else:
        arrays = [("w", params.weight), ("b", params.bias)]
    weights = sum(int(a.size) for slot, a in arrays if slot.startswith("w"))
    total = sum(int(a.size) for _, a in arrays)
    return LayerCost(name, "mixer", total, weights, weights * hw[0] * hw[1])


def count_model(model: Union[Model, ModelConfig, str],
                input_shape: Sequence[int] = (1, 3, 224, 224)) -> ComplexityReport:
    """Walk every layer and count its parameters and MACs at ``input_shape``."""
    if not isinstance(model, Model):
        model = build_model(model)
    cfg = model.cfg
    n, c, h, w = (int(v) for v in input_shape)
    if c != cfg.in_channels:
        raise ShapeError(f"input has {c} channels, model expects {cfg.in_channels}")
    if h % cfg.total_stride or w % cfg.total_stride:
        raise ShapeError(f"input {h}x{w} not divisible by stride {cfg.total_stride}")

    entries = []
    h, w = h // cfg.stem_kernel, w // cfg.stem_kernel
    entries.append(_conv_cost("stem.conv", model.stem_conv.weight, model.stem_conv.bias, (h, w)))
    entries.append(_norm_cost("stem.norm", model.stem_norm))
    for i, stage in enumerate(model.stages):
        if stage.downsample_conv is not None:
            entries.append(_norm_cost(f"stage{i}.downsample.norm", stage.downsample_norm))
            h, w = h // cfg.downsample_kernel, w // cfg.downsample_kernel
            entries.append(_conv_cost(f"stage{i}.downsample.conv", stage.downsample_conv.weight,
                                      stage.downsample_conv.bias, (h, w)))
        for j, block in enumerate(stage.blocks):
            p = f"stage{i}.block{j}"
            entries.append(_mixer_cost(f"{p}.mixer", block.mixer, (h, w)))
            entries.append(_norm_cost(f"{p}.norm", block.norm))
            entries.append(_conv_cost(f"{p}.fc1", block.fc1_weight, block.fc1_bias, (h, w), "pointwise"))
            entries.append(_conv_cost(f"{p}.fc2", block.fc2_weight, block.fc2_bias, (h, w), "pointwise"))
            if block.layerscale is not None:
                size = int(block.layerscale.size)
                entries.append(LayerCost(f"{p}.layerscale", "scale", size, size, 0))
    if model.head_fc1 is not None:
        entries.append(_conv_cost("head.fc1", model.head_fc1.weight, model.head_fc1.bias, (1, 1), "linear"))
        entries.append(_norm_cost("head.norm", model.head_norm))
        entries.append(_conv_cost("head.fc2", model.head_fc.weight, model.head_fc.bias, (1, 1), "linear"))
    else:
        entries.append(_norm_cost("head.norm", model.head_norm))
        entries.append(_conv_cost("head.fc", model.head_fc.weight, model.head_fc.bias, (1, 1), "linear"))
    for e in entries:
        e.macs *= n
        e.flops = 2 * e.macs
    return ComplexityReport(entries, (n, cfg.in_channels, *map(int, input_shape[2:])))


def count_layer(kind: str, k: int, c: int, h: int, w: int,
                cfg: BranchConfig | None = None) -> ComplexityReport:
    """Count one freshly built stride-1 C -> C layer at (1, C, H, W).

    ``kind`` is conventional (dense k x k), depthwise (k x k per channel) or
    inception (band kernel ``k``; other settings from ``cfg``).
    """
    if kind == "conventional":
        spec = ConvSpec("dense", (k, k), c, c, padding=(k // 2, k // 2))
        weight, bias = np.zeros(spec.weight_shape, np.float32), np.zeros(c, np.float32)
        entry = _conv_cost(kind, weight, bias, spec.output_hw(h, w))
    elif kind == "depthwise":
        spec = ConvSpec.depthwise(c, k, k)
        weight, bias = np.zeros((c, k, k), np.float32), np.zeros(c, np.float32)
        entry = _conv_cost(kind, weight, bias, spec.output_hw(h, w))
    elif kind == "inception":
        branch = cfg if cfg is not None else BranchConfig(band_kernel=k)
        if branch.band_kernel != k:
            raise ConfigError(f"band kernel {branch.band_kernel} != k={k}")
        entry = _mixer_cost(kind, init_mixer_params(c, branch), (h, w))
    else:
        raise ValueError(f"unknown conv kind {kind!r}")
    return ComplexityReport([entry], (1, c, h, w))


def count_mixer(mixer: Union[BranchConfig, DepthwiseMixerConfig], c: int, h: int, w: int) -> LayerCost:
    if isinstance(mixer, BranchConfig):
        return _mixer_cost("mixer", init_mixer_params(c, mixer), (h, w))
    p = int(c * mixer.conv_ratio)
    k = mixer.kernel
    return LayerCost("mixer", "mixer", p * k * k + p, p * k * k, p * k * k * h * w)


def flops_curve(kinds: Iterable[str], k_range: Iterable[int], c: int, h: int, w: int):
    """Rows of (k, kind, flops) for each kind over odd kernel sizes."""
    rows = []
    ks = list(k_range)
    if any(k % 2 == 0 for k in ks):
        raise ValueError(f"kernel sizes must be odd, got {ks}")
    for kind in kinds:
        for k in ks:
            rows.append((k, kind, analytic_conv_cost(kind, k, c, h, w)[1]))
    return rows


def curve_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["k", "kind", "flops"])
    writer.writerows(rows)
    return buf.getvalue()
