"""Inception depthwise convolution.

Channels are split into four consecutive groups (g, g, g, C - 3g) with
g = floor(C * branch_ratio). The first three go through a k_s x k_s square
kernel, a 1 x k_b band and a k_b x 1 band; the last group is passed through
unchanged. Branch order is fixed and weight files rely on it.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .conv import dwconv2d, dwconv2d_backward
from .errors import ConfigError, ShapeError
from .tensor import check_tensor, concat_channels, seeded_random, split_channels


@dataclass(frozen=True)
class BranchConfig:
    square_kernel: int = 3
    band_kernel: int = 11
    branch_ratio: float = 1 / 8
    square: bool = True
    horizontal: bool = True
    vertical: bool = True
    band_mode: str = "parallel"  # parallel | sequential

    def __post_init__(self):
        if self.square_kernel % 2 == 0 or self.band_kernel % 2 == 0:
            raise ConfigError(
                f"kernel sizes must be odd, got {self.square_kernel} and {self.band_kernel}"
            )
        if self.square_kernel < 1 or self.band_kernel < 1:
            raise ConfigError("kernel sizes must be positive")
        if not 0 < self.branch_ratio <= 1 / 3 + 1e-12:
            raise ConfigError(f"branch_ratio must lie in (0, 1/3], got {self.branch_ratio}")
        if self.band_mode not in ("parallel", "sequential"):
            raise ConfigError(f"unknown band_mode {self.band_mode!r}")

    def to_dict(self) -> dict:
        return {"type": "inception", **{f.name: getattr(self, f.name) for f in fields(self)}}


@dataclass
class MixerParams:
    """Per-branch depthwise kernels (g, kh, kw) and biases (g,).

    Disabled branches keep ``None`` slots.
    """

    w_hw: Optional[np.ndarray] = None
    b_hw: Optional[np.ndarray] = None
    w_w: Optional[np.ndarray] = None
    b_w: Optional[np.ndarray] = None
    w_h: Optional[np.ndarray] = None
    b_h: Optional[np.ndarray] = None

    def arrays(self):
        """(slot name, array) for every present parameter, in branch order."""
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                yield f.name, value


def split_indexes(c: int, cfg: BranchConfig) -> tuple[int, int, int, int]:
    if c < 1:
        raise ConfigError(f"channel count must be >= 1, got {c}")
    g = int(c * cfg.branch_ratio)
    if 3 * g > c:
        raise ConfigError(f"3g={3 * g} exceeds C={c} for ratio {cfg.branch_ratio}")
    return g, g, g, c - 3 * g


def param_shapes(c: int, cfg: BranchConfig) -> dict[str, tuple[int, ...]]:
    g = split_indexes(c, cfg)[0]
    ks, kb = cfg.square_kernel, cfg.band_kernel
    shapes = {}
    if cfg.square:
        shapes["w_hw"], shapes["b_hw"] = (g, ks, ks), (g,)
    if cfg.horizontal:
        shapes["w_w"], shapes["b_w"] = (g, 1, kb), (g,)
    if cfg.vertical:
        shapes["w_h"], shapes["b_h"] = (g, kb, 1), (g,)
    return shapes


def init_mixer_params(c: int, cfg: BranchConfig, seed: Optional[int] = None,
                      dtype=np.float32) -> MixerParams:
    """Delta kernels and zero biases when ``seed`` is None, otherwise
    normal(0, 1/fan_in) kernels and small normal biases."""
    params = {}
    for i, (slot, shape) in enumerate(param_shapes(c, cfg).items()):
        if seed is None:
            arr = np.zeros(shape, dtype=dtype)
            if slot.startswith("w"):
                arr[:, shape[1] // 2, shape[2] // 2] = 1
        else:
            arr = seeded_random(shape, seed + i, "normal", dtype)
            fan_in = shape[1] * shape[2] if slot.startswith("w") else 100
            arr *= 1 / np.sqrt(fan_in)
        params[slot] = arr
    return MixerParams(**params)


def _check(x, params: MixerParams, cfg: BranchConfig):
    check_tensor(x)
    idx = split_indexes(x.shape[1], cfg)
    expected = param_shapes(x.shape[1], cfg)
    for slot, arr in params.arrays():
        if slot not in expected:
            raise ShapeError(f"parameter {slot} present but its branch is disabled")
        if arr.shape != expected[slot]:
            raise ShapeError(f"{slot} has shape {arr.shape}, expected {expected[slot]}")
    for slot in expected:
        if getattr(params, slot) is None:
            raise ShapeError(f"missing mixer parameter {slot}")
    return idx


def inception_dwconv(x, params: MixerParams, cfg: BranchConfig) -> np.ndarray:
    if cfg.band_mode == "sequential":
        return inception_dwconv_sequential(x, params, cfg)
    idx = _check(x, params, cfg)
    x_hw, x_w, x_h, x_id = split_channels(x, idx)
    return concat_channels((
        dwconv2d(x_hw, params.w_hw, params.b_hw) if cfg.square else x_hw,
        dwconv2d(x_w, params.w_w, params.b_w) if cfg.horizontal else x_w,
        dwconv2d(x_h, params.w_h, params.b_h) if cfg.vertical else x_h,
        x_id,
    ))


def inception_dwconv_sequential(x, params: MixerParams, cfg: BranchConfig) -> np.ndarray:
    """Band kernels composed in sequence (1 x k_b then k_b x 1) on the second
    channel group; the third group joins the identity path."""
    if cfg.band_mode != "sequential":
        raise ConfigError("inception_dwconv_sequential needs band_mode='sequential'")
    idx = _check(x, params, cfg)
    x_hw, x_band, x_rest, x_id = split_channels(x, idx)
    y_band = x_band
    if cfg.horizontal:
        y_band = dwconv2d(y_band, params.w_w, params.b_w)
    if cfg.vertical:
        y_band = dwconv2d(y_band, params.w_h, params.b_h)
    return concat_channels((
        dwconv2d(x_hw, params.w_hw, params.b_hw) if cfg.square else x_hw,
        y_band,
        x_rest,
        x_id,
    ))


def inception_dwconv_backward(x, params: MixerParams, cfg: BranchConfig, grad_out):
    """Returns (grad_x, grads) where grads is a MixerParams of gradients."""
    idx = _check(x, params, cfg)
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out {grad_out.shape} != input shape {x.shape}")
    xs = split_channels(x, idx)
    gs = split_channels(grad_out, idx)
    grads = MixerParams()
    gx = [g.copy() for g in gs]

    if cfg.square:
        gx[0], grads.w_hw, grads.b_hw = dwconv2d_backward(xs[0], params.w_hw, gs[0])

    if cfg.band_mode == "parallel":
        if cfg.horizontal:
            gx[1], grads.w_w, grads.b_w = dwconv2d_backward(xs[1], params.w_w, gs[1])
        if cfg.vertical:
            gx[2], grads.w_h, grads.b_h = dwconv2d_backward(xs[2], params.w_h, gs[2])
    else:
        mid = dwconv2d(xs[1], params.w_w, params.b_w) if cfg.horizontal else xs[1]
        g_mid = gs[1]
        if cfg.vertical:
            g_mid, grads.w_h, grads.b_h = dwconv2d_backward(mid, params.w_h, gs[1])
        if cfg.horizontal:
            g_mid, grads.w_w, grads.b_w = dwconv2d_backward(xs[1], params.w_w, g_mid)
        gx[1] = g_mid

    return concat_channels(gx), grads


# Ablation variants of the default mixer, keyed by short name.
ABLATIONS: dict[str, BranchConfig] = {
    "baseline": BranchConfig(),
    "remove_horizontal_band": BranchConfig(horizontal=False),
    "remove_vertical_band": BranchConfig(vertical=False),
    "remove_square": BranchConfig(square=False),
    "sequential_bands": BranchConfig(band_mode="sequential"),
    "band_kernel_7": BranchConfig(band_kernel=7),
    "band_kernel_9": BranchConfig(band_kernel=9),
    "band_kernel_13": BranchConfig(band_kernel=13),
    "branch_ratio_1_4": BranchConfig(branch_ratio=1 / 4),
    "branch_ratio_1_16": BranchConfig(branch_ratio=1 / 16),
}

