"""Convolution kernels on NCHW arrays.

``conv2d_reference`` is the general grouped/strided convolution used as the
ground truth for everything else. The specialized depthwise and pointwise
paths only support what the token mixers and MLPs need (stride 1, odd
kernels, "same" padding) and are checked against it in the test suite.

Weights follow the usual (C_out, C_in / groups, kh, kw) layout; depthwise
weights are stored squeezed as (C, kh, kw) and pointwise weights as
(C_out, C_in).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import check_tensor


@dataclass(frozen=True)
class ConvSpec:
    kind: str  # dense | depthwise | pointwise
    kernel: tuple[int, int]
    in_channels: int
    out_channels: int
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    groups: int = 1

    def __post_init__(self):
        if self.kind not in ("dense", "depthwise", "pointwise"):
            raise ConfigError(f"unknown conv kind {self.kind!r}")
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise ConfigError(f"invalid kernel/stride/padding in {self}")
        if self.groups < 1 or self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"groups={self.groups} must divide in={self.in_channels} and out={self.out_channels}"
            )
        if self.kind == "depthwise" and not (
            self.groups == self.in_channels == self.out_channels
        ):
            raise ConfigError("depthwise conv needs groups == in_channels == out_channels")
        if self.kind == "pointwise" and tuple(self.kernel) != (1, 1):
            raise ConfigError("pointwise conv needs a 1x1 kernel")

    @classmethod
    def depthwise(cls, channels: int, kh: int, kw: int) -> "ConvSpec":
        return cls("depthwise", (kh, kw), channels, channels,
                   padding=(kh // 2, kw // 2), groups=channels)

    @classmethod
    def pointwise(cls, c_in: int, c_out: int) -> "ConvSpec":
        return cls("pointwise", (1, 1), c_in, c_out)

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, *self.kernel)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.padding
        return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1


def conv2d_reference(x, weight, bias, spec: ConvSpec) -> np.ndarray:
    """Direct zero-padded convolution, one kernel tap at a time.

    Taps are visited row-major; within a tap the input channels of a group
    are reduced, then the bias is added last.
    """
    check_tensor(x)
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"input has C={c}, spec expects {spec.in_channels}")
    weight = np.asarray(weight)
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"weight shape {weight.shape} != expected {spec.weight_shape}")
    if bias is not None and np.shape(bias) != (spec.out_channels,):
        raise ShapeError(f"bias shape {np.shape(bias)} != ({spec.out_channels},)")
    kh, kw = spec.kernel
    sh, sw = spec.stride
    ph, pw = spec.padding
    ho, wo = spec.output_hw(h, w)
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {spec.kernel} does not fit input {h}x{w}")
    g = spec.groups
    cin_g, cout_g = c // g, spec.out_channels // g

    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    xp = xp.reshape(n, g, cin_g, h + 2 * ph, w + 2 * pw)
    wg = weight.astype(x.dtype, copy=False).reshape(g, cout_g, cin_g, kh, kw)
    out = np.zeros((n, g, cout_g, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
            out += np.einsum("ngchw,goc->ngohw", patch, wg[:, :, :, i, j])
    out = out.reshape(n, spec.out_channels, ho, wo)
    if bias is not None:
        out += np.asarray(bias, dtype=x.dtype)[None, :, None, None]
    return out


def _check_dw(x, weight, bias):
    check_tensor(x, allow_empty_channels=True)
    weight = np.asarray(weight)
    if weight.ndim != 3 or weight.shape[0] != x.shape[1]:
        raise ShapeError(
            f"depthwise weight {weight.shape} does not match C={x.shape[1]}"
        )
    kh, kw = weight.shape[1:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"even kernel sizes are not supported: {kh}x{kw}")
    if bias is not None and np.shape(bias) != (x.shape[1],):
        raise ShapeError(f"bias shape {np.shape(bias)} != ({x.shape[1]},)")
    return weight, kh, kw


def dwconv2d(x, weight, bias=None) -> np.ndarray:
    """Stride-1 depthwise conv with (kh//2, kw//2) zero padding.

    ``weight`` has shape (C, kh, kw); band kernels are just kh == 1 or kw == 1.
    """
    weight, kh, kw = _check_dw(x, weight, bias)
    n, c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    wt = weight.astype(x.dtype, copy=False)
    out = np.zeros_like(x)
    tmp = np.empty_like(x)
    for i in range(kh):
        for j in range(kw):
            np.multiply(xp[:, :, i:i + h, j:j + w], wt[None, :, i, j, None, None], out=tmp)
            out += tmp
    if bias is not None:
        out += np.asarray(bias, dtype=x.dtype)[None, :, None, None]
    return out


def dwconv2d_backward(x, weight, grad_out):
    """Gradients of ``dwconv2d`` w.r.t. input, weight and bias."""
    weight, kh, kw = _check_dw(x, weight, None)
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out {grad_out.shape} != output shape {x.shape}")
    n, c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    gxp = np.zeros_like(xp)
    gw = np.zeros(weight.shape, dtype=x.dtype)
    wt = weight.astype(x.dtype, copy=False)
    for i in range(kh):
        for j in range(kw):
            gw[:, i, j] = np.einsum("nchw,nchw->c", grad_out, xp[:, :, i:i + h, j:j + w])
            gxp[:, :, i:i + h, j:j + w] += grad_out * wt[None, :, i, j, None, None]
    gx = np.ascontiguousarray(gxp[:, :, ph:ph + h, pw:pw + w])
    gb = grad_out.sum(axis=(0, 2, 3))
    return gx, gw, gb


def pointwise(x, weight, bias=None) -> np.ndarray:
    """1x1 convolution: a (C_out, C_in) matrix applied at every pixel."""
    check_tensor(x)
    weight = np.asarray(weight)
    n, c, h, w = x.shape
    if weight.ndim != 2 or weight.shape[1] != c:
        raise ShapeError(f"pointwise weight {weight.shape} does not match C_in={c}")
    if bias is not None and np.shape(bias) != (weight.shape[0],):
        raise ShapeError(f"bias shape {np.shape(bias)} != ({weight.shape[0]},)")
    out = np.matmul(weight.astype(x.dtype, copy=False), x.reshape(n, c, h * w))
    if bias is not None:
        out += np.asarray(bias, dtype=x.dtype)[None, :, None]
    return out.reshape(n, weight.shape[0], h, w)


def pointwise_backward(x, weight, grad_out):
    check_tensor(x)
    weight = np.asarray(weight)
    n, c, h, w = x.shape
    if grad_out.shape != (n, weight.shape[0], h, w):
        raise ShapeError(f"grad_out {grad_out.shape} inconsistent with weight {weight.shape}")
    g = grad_out.reshape(n, weight.shape[0], h * w)
    xr = x.reshape(n, c, h * w)
    gx = np.matmul(weight.T.astype(x.dtype, copy=False), g).reshape(x.shape)
    gw = np.einsum("nop,ncp->oc", g, xr)
    gb = g.sum(axis=(0, 2))
    return gx, gw, gb


def partial_channels(c: int, conv_ratio: float) -> int:
    if not 0 <= conv_ratio <= 1:
        raise ConfigError(f"conv_ratio must lie in [0, 1], got {conv_ratio}")
    return int(c * conv_ratio)


def partial_dwconv(x, weight, bias, k: int, conv_ratio: float) -> np.ndarray:
    """Depthwise k x k conv on the first floor(C * conv_ratio) channels only;
    the remaining channels pass through untouched."""
    check_tensor(x)
    p = partial_channels(x.shape[1], conv_ratio)
    weight = np.asarray(weight)
    if weight.shape != (p, k, k):
        raise ShapeError(f"partial conv weight {weight.shape} != ({p}, {k}, {k})")
    if p == 0:
        return x.copy()
    out = x.copy()
    out[:, :p] = dwconv2d(x[:, :p], weight, bias)
    return out


def partial_dwconv_backward(x, weight, grad_out, conv_ratio: float):
    p = partial_channels(x.shape[1], conv_ratio)
    gx = grad_out.copy()
    gx_p, gw, gb = dwconv2d_backward(x[:, :p], weight, grad_out[:, :p])
    gx[:, :p] = gx_p
    return gx, gw, gb


def patch_conv(x, weight, bias=None) -> np.ndarray:
    """Dense conv whose stride equals its kernel and has no padding
    (stem and downsampling layers), computed as patchify + matmul."""
    check_tensor(x)
    weight = np.asarray(weight)
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"weight {weight.shape} does not match C_in={c}")
    if h % kh or w % kw:
        raise ShapeError(f"input {h}x{w} not divisible by patch {kh}x{kw}")
    ho, wo = h // kh, w // kw
    patches = x.reshape(n, c, ho, kh, wo, kw).transpose(0, 2, 4, 1, 3, 5)
    patches = patches.reshape(n, ho * wo, c * kh * kw)
    out = np.matmul(patches, weight.reshape(co, -1).T.astype(x.dtype, copy=False))
    if bias is not None:
        out += np.asarray(bias, dtype=x.dtype)
    return np.ascontiguousarray(out.transpose(0, 2, 1).reshape(n, co, ho, wo))
