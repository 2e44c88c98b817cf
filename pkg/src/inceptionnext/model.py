"""MetaNeXt blocks and the four-stage / isotropic models built from them.

A block computes ``fc2(gelu(fc1(norm(mixer(x))))) * layerscale + x`` where
the mixer is either an Inception depthwise conv or a (possibly partial)
square depthwise conv, the norm is BatchNorm and fc1/fc2 are 1x1 convs.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, fields
from typing import Iterator, Optional, Union

import numpy as np
from scipy.special import erf
from threadpoolctl import threadpool_limits

from .conv import (
    dwconv2d,
    partial_channels,
    partial_dwconv,
    partial_dwconv_backward,
    dwconv2d_backward,
    patch_conv,
    pointwise,
    pointwise_backward,
)
from .errors import ConfigError, ShapeError
from .mixer import (
    BranchConfig,
    MixerParams,
    inception_dwconv,
    inception_dwconv_backward,
    param_shapes,
)
from .tensor import check_tensor, global_avg_pool, parallel_map, seeded_random

SQRT_HALF = 0.7071067811865476
INV_SQRT_2PI = 0.3989422804014327


# ---------------------------------------------------------------------------
# elementwise pieces

@dataclass
class NormParams:
    weight: np.ndarray
    bias: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    @classmethod
    def identity(cls, c: int, eps: float = 1e-5, dtype=np.float32) -> "NormParams":
        return cls(np.ones(c, dtype), np.zeros(c, dtype), np.zeros(c, dtype),
                   np.ones(c, dtype), eps)


def batchnorm2d(x, norm: NormParams, mode: str = "eval") -> np.ndarray:
    """BatchNorm over (N, H, W) per channel.

    eval uses the stored statistics; train uses the batch mean and the
    biased batch variance.
    """
    check_tensor(x)
    c = x.shape[1]
    for name in ("weight", "bias", "mean", "var"):
        if np.shape(getattr(norm, name)) != (c,):
            raise ShapeError(f"norm {name} has shape {np.shape(getattr(norm, name))}, C={c}")
    if mode == "eval":
        mean, var = norm.mean, norm.var
    elif mode == "train":
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
    else:
        raise ValueError(f"unknown norm mode {mode!r}")
    dt = x.dtype
    scale = (np.asarray(norm.weight, dt) / np.sqrt(np.asarray(var, dt) + dt.type(norm.eps)))
    shift = np.asarray(norm.bias, dt) - np.asarray(mean, dt) * scale
    return x * scale[None, :, None, None] + shift[None, :, None, None]


def gelu(x) -> np.ndarray:
    """Exact GELU, x * Phi(x) with the erf-based normal CDF."""
    x = np.asarray(x)
    half = x.dtype.type(0.5)
    return x * half * (1 + erf(x * x.dtype.type(SQRT_HALF)))


def gelu_grad(x) -> np.ndarray:
    x = np.asarray(x)
    cdf = 0.5 * (1 + erf(x * SQRT_HALF))
    pdf = INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return (cdf + x * pdf).astype(x.dtype, copy=False)


# ---------------------------------------------------------------------------
# blocks

@dataclass(frozen=True)
class DepthwiseMixerConfig:
    """Square k x k depthwise mixer; conv_ratio < 1 convolves only the
    leading floor(C * conv_ratio) channels."""

    kernel: int = 7
    conv_ratio: float = 1.0

    def __post_init__(self):
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ConfigError(f"depthwise kernel must be odd and positive, got {self.kernel}")
        if not 0 <= self.conv_ratio <= 1:
            raise ConfigError(f"conv_ratio must lie in [0, 1], got {self.conv_ratio}")

    def to_dict(self) -> dict:
        return {"type": "depthwise", "kernel": self.kernel, "conv_ratio": self.conv_ratio}


MixerConfig = Union[BranchConfig, DepthwiseMixerConfig]


def mixer_from_dict(d: dict) -> MixerConfig:
    d = dict(d)
    kind = d.pop("type")
    if kind == "inception":
        return BranchConfig(**d)
    if kind == "depthwise":
        return DepthwiseMixerConfig(**d)
    raise ConfigError(f"unknown mixer type {kind!r}")


@dataclass
class DepthwiseParams:
    weight: np.ndarray  # (p, k, k)
    bias: np.ndarray  # (p,)


# Mixer slot -> container tensor name.
_MIXER_NAMES = {
    "w_hw": "mixer_hw.weight", "b_hw": "mixer_hw.bias",
    "w_w": "mixer_w.weight", "b_w": "mixer_w.bias",
    "w_h": "mixer_h.weight", "b_h": "mixer_h.bias",
}


@dataclass
class BlockParams:
    mixer: Union[MixerParams, DepthwiseParams]
    norm: NormParams
    fc1_weight: np.ndarray  # (rC, C)
    fc1_bias: np.ndarray
    fc2_weight: np.ndarray  # (C, rC)
    fc2_bias: np.ndarray
    layerscale: Optional[np.ndarray] = None

    def slots(self) -> Iterator[tuple[str, object, str]]:
        """(tensor name, owner object, attribute) for every array."""
        if isinstance(self.mixer, MixerParams):
            for slot, _ in self.mixer.arrays():
                yield _MIXER_NAMES[slot], self.mixer, slot
        else:
            yield "mixer.weight", self.mixer, "weight"
            yield "mixer.bias", self.mixer, "bias"
        for attr in ("weight", "bias", "mean", "var"):
            yield f"norm.{attr}", self.norm, attr
        yield "fc1.weight", self, "fc1_weight"
        yield "fc1.bias", self, "fc1_bias"
        yield "fc2.weight", self, "fc2_weight"
        yield "fc2.bias", self, "fc2_bias"
        if self.layerscale is not None:
            yield "layerscale.weight", self, "layerscale"

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(owner, attr) for name, owner, attr in self.slots()}


def block_param_shapes(c: int, mlp_ratio: float, mixer: MixerConfig,
                       layerscale: bool = True) -> dict[str, tuple[int, ...]]:
    hidden = int(round(mlp_ratio * c))
    shapes = {}
    if isinstance(mixer, BranchConfig):
        for slot, shape in param_shapes(c, mixer).items():
            shapes[_MIXER_NAMES[slot]] = shape
    else:
        p = partial_channels(c, mixer.conv_ratio)
        shapes["mixer.weight"] = (p, mixer.kernel, mixer.kernel)
        shapes["mixer.bias"] = (p,)
    for name in ("weight", "bias", "mean", "var"):
        shapes[f"norm.{name}"] = (c,)
    shapes["fc1.weight"] = (hidden, c)
    shapes["fc1.bias"] = (hidden,)
    shapes["fc2.weight"] = (c, hidden)
    shapes["fc2.bias"] = (c,)
    if layerscale:
        shapes["layerscale.weight"] = (c,)
    return shapes


def block_from_arrays(arrays: dict[str, np.ndarray], mixer: MixerConfig,
                      eps: float = 1e-5) -> BlockParams:
    if isinstance(mixer, BranchConfig):
        inv = {v: k for k, v in _MIXER_NAMES.items()}
        mp = MixerParams(**{inv[n]: a for n, a in arrays.items() if n in inv})
    else:
        mp = DepthwiseParams(arrays["mixer.weight"], arrays["mixer.bias"])
    norm = NormParams(arrays["norm.weight"], arrays["norm.bias"],
                      arrays["norm.mean"], arrays["norm.var"], eps)
    return BlockParams(mp, norm, arrays["fc1.weight"], arrays["fc1.bias"],
                       arrays["fc2.weight"], arrays["fc2.bias"],
                       arrays.get("layerscale.weight"))


def apply_mixer(x, params, mixer: MixerConfig) -> np.ndarray:
    if isinstance(mixer, BranchConfig):
        return inception_dwconv(x, params, mixer)
    if mixer.conv_ratio == 1.0:
        return dwconv2d(x, params.weight, params.bias)
    return partial_dwconv(x, params.weight, params.bias, mixer.kernel, mixer.conv_ratio)


def mixer_backward(x, params, mixer: MixerConfig, grad_out):
    """(grad_x, {tensor name: grad}) for either mixer family."""
    if isinstance(mixer, BranchConfig):
        gx, grads = inception_dwconv_backward(x, params, mixer, grad_out)
        return gx, {_MIXER_NAMES[slot]: g for slot, g in grads.arrays()}
    if mixer.conv_ratio == 1.0:
        gx, gw, gb = dwconv2d_backward(x, params.weight, grad_out)
    else:
        gx, gw, gb = partial_dwconv_backward(x, params.weight, grad_out, mixer.conv_ratio)
    return gx, {"mixer.weight": gw, "mixer.bias": gb}


def _norm_scale(norm: NormParams, dtype):
    return np.asarray(norm.weight, dtype) / np.sqrt(np.asarray(norm.var, dtype) + dtype.type(norm.eps))


def metanext_block(x, params: BlockParams, mixer: MixerConfig,
                   norm_mode: str = "eval") -> np.ndarray:
    mixed = apply_mixer(x, params.mixer, mixer)
    y = batchnorm2d(mixed, params.norm, norm_mode)
    y = pointwise(y, params.fc1_weight, params.fc1_bias)
    y = gelu(y)
    y = pointwise(y, params.fc2_weight, params.fc2_bias)
    if params.layerscale is not None:
        y = y * np.asarray(params.layerscale, x.dtype)[None, :, None, None]
    return y + x


def convnext_block(x, params: BlockParams, k: int = 7) -> np.ndarray:
    """MetaNeXt block with a plain k x k depthwise token mixer."""
    return metanext_block(x, params, DepthwiseMixerConfig(kernel=k))


def metanext_block_backward(x, params: BlockParams, mixer: MixerConfig, grad_out):
    """Analytic gradients of ``metanext_block`` with eval-mode norm.

    Returns (grad_x, {tensor name: grad}); running statistics get no grads.
    """
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out {grad_out.shape} != input shape {x.shape}")
    dt = x.dtype
    mixed = apply_mixer(x, params.mixer, mixer)
    normed = batchnorm2d(mixed, params.norm, "eval")
    hidden = pointwise(normed, params.fc1_weight, params.fc1_bias)
    act = gelu(hidden)
    out = pointwise(act, params.fc2_weight, params.fc2_bias)

    grads = {}
    if params.layerscale is not None:
        grads["layerscale.weight"] = np.einsum("nchw,nchw->c", grad_out, out)
        g_out = grad_out * np.asarray(params.layerscale, dt)[None, :, None, None]
    else:
        g_out = grad_out
    g_act, grads["fc2.weight"], grads["fc2.bias"] = pointwise_backward(act, params.fc2_weight, g_out)
    g_hidden = g_act * gelu_grad(hidden)
    g_normed, grads["fc1.weight"], grads["fc1.bias"] = pointwise_backward(
        normed, params.fc1_weight, g_hidden)

    inv_std = 1 / np.sqrt(np.asarray(params.norm.var, dt) + dt.type(params.norm.eps))
    x_hat = (mixed - np.asarray(params.norm.mean, dt)[None, :, None, None]) * inv_std[None, :, None, None]
    grads["norm.weight"] = np.einsum("nchw,nchw->c", g_normed, x_hat)
    grads["norm.bias"] = g_normed.sum(axis=(0, 2, 3))
    g_mixed = g_normed * _norm_scale(params.norm, dt)[None, :, None, None]

    g_x, mixer_grads = mixer_backward(x, params.mixer, mixer, g_mixed)
    grads.update(mixer_grads)
    return grad_out + g_x, grads


# ---------------------------------------------------------------------------
# model configuration

@dataclass(frozen=True)
class ModelConfig:
    name: str
    depths: tuple[int, ...]
    dims: tuple[int, ...]
    mlp_ratios: tuple[float, ...]
    mixer: MixerConfig = field(default_factory=BranchConfig)
    stem_kernel: int = 4  # stride equals kernel
    downsample_kernel: int = 2
    head: str = "mlp"  # mlp | linear
    head_hidden_ratio: float = 3.0
    num_classes: int = 1000
    in_channels: int = 3
    layerscale_init: Optional[float] = 1e-6
    norm_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "mlp_ratios", tuple(self.mlp_ratios))
        n = len(self.depths)
        if n not in (1, 4) or len(self.dims) != n or len(self.mlp_ratios) != n:
            raise ConfigError(
                f"depths/dims/mlp_ratios must all have length 4 (or 1 for isotropic), got "
                f"{len(self.depths)}/{len(self.dims)}/{len(self.mlp_ratios)}"
            )
        if self.head not in ("mlp", "linear"):
            raise ConfigError(f"unknown head {self.head!r}")
        if min(self.depths) < 0 or min(self.dims) < 1:
            raise ConfigError("depths must be >= 0 and dims >= 1")

    @property
    def isotropic(self) -> bool:
        return len(self.depths) == 1

    @property
    def total_stride(self) -> int:
        return self.stem_kernel * self.downsample_kernel ** (len(self.depths) - 1)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["mixer"] = self.mixer.to_dict()
        for key in ("depths", "dims", "mlp_ratios"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if isinstance(d.get("mixer"), dict):
            d["mixer"] = mixer_from_dict(d["mixer"])
        return cls(**d)


def _four_stage(name, depths, dims, mlp_ratios, mixer, head="mlp"):
    return ModelConfig(name, depths, dims, mlp_ratios, mixer, head=head)


PRESETS: dict[str, ModelConfig] = {
    "inceptionnext_t": _four_stage("inceptionnext_t", (3, 3, 9, 3), (96, 192, 384, 768),
                                   (4, 4, 4, 3), BranchConfig()),
    "inceptionnext_s": _four_stage("inceptionnext_s", (3, 3, 27, 3), (96, 192, 384, 768),
                                   (4, 4, 4, 3), BranchConfig()),
    "inceptionnext_b": _four_stage("inceptionnext_b", (3, 3, 27, 3), (128, 256, 512, 1024),
                                   (4, 4, 4, 3), BranchConfig()),
    "inceptionnext_s_iso": ModelConfig("inceptionnext_s_iso", (18,), (384,), (4,), BranchConfig(),
                                       stem_kernel=16, head="linear"),
    "inceptionnext_b_iso": ModelConfig("inceptionnext_b_iso", (18,), (768,), (4,), BranchConfig(),
                                       stem_kernel=16, head="linear"),
}
for _k in (3, 5, 7):
    PRESETS[f"convnext_t_k{_k}"] = _four_stage(
        f"convnext_t_k{_k}", (3, 3, 9, 3), (96, 192, 384, 768), (4, 4, 4, 4),
        DepthwiseMixerConfig(kernel=_k), head="linear")


def get_preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------------------
# model

@dataclass
class Conv:
    weight: np.ndarray  # (C_out, C_in, k, k), stride == k
    bias: np.ndarray


@dataclass
class Linear:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray


@dataclass
class Stage:
    blocks: list[BlockParams]
    downsample_norm: Optional[NormParams] = None
    downsample_conv: Optional[Conv] = None


@dataclass
class Model:
    cfg: ModelConfig
    stem_conv: Conv
    stem_norm: NormParams
    stages: list[Stage]
    head_norm: NormParams
    head_fc: Linear
    head_fc1: Optional[Linear] = None

    def slots(self) -> Iterator[tuple[str, object, str]]:
        """(tensor name, owner, attribute) for every array, in file order."""
        yield "stem.conv.weight", self.stem_conv, "weight"
        yield "stem.conv.bias", self.stem_conv, "bias"
        yield from _norm_slots("stem.norm", self.stem_norm)
        for i, stage in enumerate(self.stages):
            if stage.downsample_conv is not None:
                yield from _norm_slots(f"stage{i}.downsample.norm", stage.downsample_norm)
                yield f"stage{i}.downsample.conv.weight", stage.downsample_conv, "weight"
                yield f"stage{i}.downsample.conv.bias", stage.downsample_conv, "bias"
            for j, block in enumerate(stage.blocks):
                for name, owner, attr in block.slots():
                    yield f"stage{i}.block{j}.{name}", owner, attr
        if self.head_fc1 is not None:
            yield "head.fc1.weight", self.head_fc1, "weight"
            yield "head.fc1.bias", self.head_fc1, "bias"
            yield from _norm_slots("head.norm", self.head_norm)
            yield "head.fc2.weight", self.head_fc, "weight"
            yield "head.fc2.bias", self.head_fc, "bias"
        else:
            yield from _norm_slots("head.norm", self.head_norm)
            yield "head.fc.weight", self.head_fc, "weight"
            yield "head.fc.bias", self.head_fc, "bias"

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(owner, attr) for name, owner, attr in self.slots()}


def _norm_slots(prefix, norm):
    for attr in ("weight", "bias", "mean", "var"):
        yield f"{prefix}.{attr}", norm, attr


def model_param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every tensor name of a model with ``cfg`` mapped to its shape."""
    shapes: dict[str, tuple[int, ...]] = {}
    c0 = cfg.dims[0]
    k = cfg.stem_kernel
    shapes["stem.conv.weight"] = (c0, cfg.in_channels, k, k)
    shapes["stem.conv.bias"] = (c0,)
    for attr in ("weight", "bias", "mean", "var"):
        shapes[f"stem.norm.{attr}"] = (c0,)
    use_ls = cfg.layerscale_init is not None
    for i, (depth, dim, ratio) in enumerate(zip(cfg.depths, cfg.dims, cfg.mlp_ratios)):
        if i > 0:
            prev, kd = cfg.dims[i - 1], cfg.downsample_kernel
            for attr in ("weight", "bias", "mean", "var"):
                shapes[f"stage{i}.downsample.norm.{attr}"] = (prev,)
            shapes[f"stage{i}.downsample.conv.weight"] = (dim, prev, kd, kd)
            shapes[f"stage{i}.downsample.conv.bias"] = (dim,)
        for j in range(depth):
            for name, shape in block_param_shapes(dim, ratio, cfg.mixer, use_ls).items():
                shapes[f"stage{i}.block{j}.{name}"] = shape
    c_last = cfg.dims[-1]
    if cfg.head == "mlp":
        hidden = int(round(cfg.head_hidden_ratio * c_last))
        shapes["head.fc1.weight"] = (hidden, c_last)
        shapes["head.fc1.bias"] = (hidden,)
        for attr in ("weight", "bias", "mean", "var"):
            shapes[f"head.norm.{attr}"] = (hidden,)
        shapes["head.fc2.weight"] = (cfg.num_classes, hidden)
        shapes["head.fc2.bias"] = (cfg.num_classes,)
    else:
        for attr in ("weight", "bias", "mean", "var"):
            shapes[f"head.norm.{attr}"] = (c_last,)
        shapes["head.fc.weight"] = (cfg.num_classes, c_last)
        shapes["head.fc.bias"] = (cfg.num_classes,)
    return shapes


def _tensor_seed(seed: int, name: str) -> int:
    return ((seed * 0x100000001B3) ^ zlib.crc32(name.encode())) & 0xFFFFFFFFFFFFFFFF


def _init_array(name: str, shape, cfg: ModelConfig, seed: Optional[int]) -> np.ndarray:
    leaf = name.rsplit(".", 2)
    kind, attr = leaf[-2], leaf[-1]
    if kind == "layerscale":
        return np.full(shape, cfg.layerscale_init, dtype=np.float32)
    if kind == "norm":
        if seed is None or attr in ("weight", "var"):
            base = np.ones(shape, np.float32) if attr in ("weight", "var") else np.zeros(shape, np.float32)
            if seed is not None:
                jitter = seeded_random(shape, _tensor_seed(seed, name), "uniform")
                base += np.float32(0.5) * jitter if attr == "var" else np.float32(0.2) * (jitter - np.float32(0.5))
            return base
        return np.float32(0.1) * seeded_random(shape, _tensor_seed(seed, name), "normal")
    if seed is None:
        return np.zeros(shape, dtype=np.float32)
    values = seeded_random(shape, _tensor_seed(seed, name), "normal")
    if attr == "bias":
        return values * np.float32(0.02)
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    return values * np.float32(1 / np.sqrt(max(fan_in, 1)))


def build_model(cfg: Union[ModelConfig, str], seed: Optional[int] = None) -> Model:
    """Assemble a model from a config or preset name.

    With ``seed=None`` conv and linear weights are zero and norms are
    identities (cheap, for counting or loading). With a seed, every tensor is
    drawn deterministically from ``seeded_random`` keyed on its name.
    LayerScale is always initialized to ``cfg.layerscale_init``.
    """
    if isinstance(cfg, str):
        cfg = get_preset(cfg)
    arrays = {name: _init_array(name, shape, cfg, seed)
              for name, shape in model_param_shapes(cfg).items()}
    return assemble_model(cfg, arrays)


def assemble_model(cfg: ModelConfig, arrays: dict[str, np.ndarray]) -> Model:
    eps = cfg.norm_eps

    def norm(prefix):
        return NormParams(arrays[f"{prefix}.weight"], arrays[f"{prefix}.bias"],
                          arrays[f"{prefix}.mean"], arrays[f"{prefix}.var"], eps)

    stages = []
    for i, depth in enumerate(cfg.depths):
        blocks = []
        for j in range(depth):
            prefix = f"stage{i}.block{j}."
            sub = {n[len(prefix):]: a for n, a in arrays.items() if n.startswith(prefix)}
            blocks.append(block_from_arrays(sub, cfg.mixer, eps))
        stage = Stage(blocks)
        if i > 0:
            stage.downsample_norm = norm(f"stage{i}.downsample.norm")
            stage.downsample_conv = Conv(arrays[f"stage{i}.downsample.conv.weight"],
                                         arrays[f"stage{i}.downsample.conv.bias"])
        stages.append(stage)
    if cfg.head == "mlp":
        fc1 = Linear(arrays["head.fc1.weight"], arrays["head.fc1.bias"])
        fc = Linear(arrays["head.fc2.weight"], arrays["head.fc2.bias"])
    else:
        fc1 = None
        fc = Linear(arrays["head.fc.weight"], arrays["head.fc.bias"])
    return Model(cfg, Conv(arrays["stem.conv.weight"], arrays["stem.conv.bias"]),
                 norm("stem.norm"), stages, norm("head.norm"), fc, fc1)


def _forward_item(model: Model, x: np.ndarray):
    cfg = model.cfg
    y = patch_conv(x, model.stem_conv.weight, model.stem_conv.bias)
    y = batchnorm2d(y, model.stem_norm)
    stage_outputs = []
    for stage in model.stages:
        if stage.downsample_conv is not None:
            y = batchnorm2d(y, stage.downsample_norm)
            y = patch_conv(y, stage.downsample_conv.weight, stage.downsample_conv.bias)
        for block in stage.blocks:
            y = metanext_block(y, block, cfg.mixer)
        stage_outputs.append(y)
    y = global_avg_pool(y)
    if model.head_fc1 is not None:
        y = pointwise(y, model.head_fc1.weight, model.head_fc1.bias)
        y = gelu(y)
        y = batchnorm2d(y, model.head_norm)
    else:
        y = batchnorm2d(y, model.head_norm)
    y = pointwise(y, model.head_fc.weight, model.head_fc.bias)
    return y.reshape(y.shape[0], -1), stage_outputs


def model_forward(model: Model, x, threads: Optional[int] = None,
                  return_stages: bool = False):
    """Eval-mode forward pass returning (N, num_classes) logits.

    Batch items are processed independently (optionally on ``threads``
    workers) with BLAS pinned to one thread, so logits are bit-identical for
    any worker count.
    """
    x = np.ascontiguousarray(x, dtype=np.float32)
    check_tensor(x)
    cfg = model.cfg
    stride = cfg.total_stride
    if x.shape[1] != cfg.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, model expects {cfg.in_channels}")
    if x.shape[2] % stride or x.shape[3] % stride:
        raise ShapeError(
            f"input size {x.shape[2]}x{x.shape[3]} is not divisible by the required stride {stride}"
        )
    items = [x[i:i + 1] for i in range(x.shape[0])]
    with threadpool_limits(limits=1, user_api="blas"):
        results = parallel_map(lambda item: _forward_item(model, item), items, threads)
    logits = np.concatenate([r[0] for r in results], axis=0)
    if not return_stages:
        return logits
    stages = [np.concatenate([r[1][s] for r in results], axis=0)
              for s in range(len(model.stages))]
    return logits, stages
