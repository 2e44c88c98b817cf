"""Finite-difference verification of the analytic backward passes.

Every target builds a small float64 fixture from a seed, forms the scalar
loss ``sum(forward(...) * R)`` for a fixed random projection R, and compares
the analytic gradients (backward called with grad_out = R) to central
differences of that loss, one parameter group at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .conv import (
    dwconv2d,
    dwconv2d_backward,
    partial_dwconv,
    partial_dwconv_backward,
    pointwise,
    pointwise_backward,
)
from .errors import UnsupportedTargetError
from .mixer import BranchConfig, inception_dwconv, inception_dwconv_backward, init_mixer_params
from .model import (
    BlockParams,
    DepthwiseMixerConfig,
    DepthwiseParams,
    NormParams,
    metanext_block,
    metanext_block_backward,
)
from .tensor import seeded_random, splitmix64

F64 = np.float64


def numerical_grad(loss: Callable[[], float], arr: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central differences of ``loss()`` w.r.t. every element of ``arr``
    (perturbed in place and restored)."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss()
        flat[i] = orig - eps
        down = loss()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| divided by the larger of the two gradients' max-abs."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)),
                float(np.max(np.abs(numeric), initial=0.0)))
    diff = float(np.max(np.abs(analytic - numeric), initial=0.0))
    if scale == 0.0:
        return diff
    return diff / scale


@dataclass
class GradcheckResult:
    target: str
    seed: int
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


class _Rng:
    """Small helper turning one seed into a stream of fixture draws."""

    def __init__(self, seed: int):
        self.seed = seed
        self.counter = 0

    def _next_seed(self) -> int:
        self.counter += 1
        return int(splitmix64(self.seed, self.counter)[-1])

    def normal(self, *shape, scale=1.0) -> np.ndarray:
        return seeded_random(shape, self._next_seed(), "normal", F64) * scale

    def uniform(self, *shape) -> np.ndarray:
        return seeded_random(shape, self._next_seed(), "uniform", F64)

    def choice(self, options):
        return options[int(self.uniform(1)[0] * len(options))]


def _norm(rng: _Rng, c: int) -> NormParams:
    return NormParams(1 + 0.3 * rng.normal(c), 0.2 * rng.normal(c), 0.2 * rng.normal(c),
                      0.5 + rng.uniform(c), 1e-5)


def _block(rng: _Rng, c: int, ratio: int, mixer_params) -> BlockParams:
    hidden = ratio * c
    return BlockParams(mixer_params, _norm(rng, c),
                       rng.normal(hidden, c, scale=c ** -0.5), rng.normal(hidden, scale=0.1),
                       rng.normal(c, hidden, scale=hidden ** -0.5), rng.normal(c, scale=0.1),
                       rng.normal(c, scale=0.5))


def _case_dwconv2d(rng):
    c = rng.choice([1, 2, 3, 4])
    kh, kw = rng.choice([(3, 3), (1, 5), (5, 1), (5, 5), (1, 1)])
    x = rng.normal(1, c, rng.choice([5, 6, 8]), rng.choice([5, 7, 8]))
    w, b = rng.normal(c, kh, kw), rng.normal(c)
    arrays = {"x": x, "weight": w, "bias": b}

    def fwd():
        return dwconv2d(arrays["x"], arrays["weight"], arrays["bias"])

    def bwd(g):
        gx, gw, gb = dwconv2d_backward(arrays["x"], arrays["weight"], g)
        return {"x": gx, "weight": gw, "bias": gb}

    return arrays, fwd, bwd


def _case_pointwise(rng):
    ci, co = rng.choice([1, 3, 5]), rng.choice([1, 2, 4])
    arrays = {"x": rng.normal(2, ci, 4, 5), "weight": rng.normal(co, ci), "bias": rng.normal(co)}

    def fwd():
        return pointwise(arrays["x"], arrays["weight"], arrays["bias"])

    def bwd(g):
        gx, gw, gb = pointwise_backward(arrays["x"], arrays["weight"], g)
        return {"x": gx, "weight": gw, "bias": gb}

    return arrays, fwd, bwd


def _case_partial_dwconv(rng):
    c, ratio, k = 8, rng.choice([0.25, 0.5, 0.75, 1.0]), 3
    p = int(c * ratio)
    arrays = {"x": rng.normal(1, c, 6, 6), "weight": rng.normal(p, k, k), "bias": rng.normal(p)}

    def fwd():
        return partial_dwconv(arrays["x"], arrays["weight"], arrays["bias"], k, ratio)

    def bwd(g):
        gx, gw, gb = partial_dwconv_backward(arrays["x"], arrays["weight"], g, ratio)
        return {"x": gx, "weight": gw, "bias": gb}

    return arrays, fwd, bwd


def _inception_case(rng, mode):
    cfg = BranchConfig(band_kernel=rng.choice([5, 7]), branch_ratio=rng.choice([1 / 8, 1 / 4]),
                       band_mode=mode)
    c = rng.choice([8, 12, 16])
    params = init_mixer_params(c, cfg, seed=rng._next_seed(), dtype=F64)
    arrays = {"x": rng.normal(1, c, 7, 8)}
    arrays.update(params.arrays())

    def fwd():
        return inception_dwconv(arrays["x"], params, cfg)

    def bwd(g):
        gx, grads = inception_dwconv_backward(arrays["x"], params, cfg, g)
        return {"x": gx, **dict(grads.arrays())}

    return arrays, fwd, bwd


def _case_inception(rng):
    return _inception_case(rng, "parallel")


def _case_inception_sequential(rng):
    return _inception_case(rng, "sequential")


def _block_case(rng, mixer_cfg):
    c, ratio = 8, 4
    if isinstance(mixer_cfg, BranchConfig):
        mp = init_mixer_params(c, mixer_cfg, seed=rng._next_seed(), dtype=F64)
    else:
        k = mixer_cfg.kernel
        mp = DepthwiseParams(rng.normal(c, k, k, scale=1 / k), rng.normal(c, scale=0.1))
    block = _block(rng, c, ratio, mp)
    arrays = {"x": rng.normal(1, c, 6, 6)}
    for name, owner, attr in block.slots():
        if name in ("norm.mean", "norm.var"):
            continue
        arrays[name] = getattr(owner, attr)

    def fwd():
        return metanext_block(arrays["x"], block, mixer_cfg)

    def bwd(g):
        gx, grads = metanext_block_backward(arrays["x"], block, mixer_cfg, g)
        return {"x": gx, **grads}

    return arrays, fwd, bwd


def _case_metanext_block(rng):
    return _block_case(rng, BranchConfig(band_kernel=5, branch_ratio=1 / 8))


def _case_convnext_block(rng):
    return _block_case(rng, DepthwiseMixerConfig(kernel=3))


TARGETS = {
    "dwconv2d": (_case_dwconv2d, 1e-6),
    "pointwise": (_case_pointwise, 1e-6),
    "partial_dwconv": (_case_partial_dwconv, 1e-6),
    "inception_dwconv": (_case_inception, 1e-6),
    "inception_dwconv_sequential": (_case_inception_sequential, 1e-6),
    "metanext_block": (_case_metanext_block, 1e-5),
    "convnext_block": (_case_convnext_block, 1e-5),
}


def run_gradcheck(target: str, seed: int = 0, eps: float = 1e-4,
                  tolerance: float | None = None) -> GradcheckResult:
    """Compare analytic and central-difference gradients for ``target``.

    The arrays held in the fixture are perturbed in place, so the forward
    closure always sees the current values.
    """
    if target not in TARGETS:
        raise UnsupportedTargetError(
            f"no backward pass for target {target!r}; supported: {sorted(TARGETS)}"
        )
    build, default_tol = TARGETS[target]
    rng = _Rng(seed)
    arrays, fwd, bwd = build(rng)
    proj = rng.normal(*fwd().shape)

    def loss():
        return float(np.sum(fwd() * proj))

    analytic = bwd(proj)
    result = GradcheckResult(target, seed, default_tol if tolerance is None else tolerance)
    for name, arr in arrays.items():
        result.errors[name] = relative_error(analytic[name], numerical_grad(loss, arr, eps))
    return result
