"""Rank-4 NCHW tensors as plain numpy arrays, plus the few structural ops
the rest of the package needs.

Tensors are ``np.ndarray`` values of dtype float32 (default) or float64 (for
gradient checks), always C-contiguous in (N, C, H, W) order.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

THREADS_ENV = "INCEPTIONNEXT_THREADS"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def as_tensor(x, dtype=np.float32) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=dtype)
    if arr.ndim != 4:
        raise ShapeError(f"expected a rank-4 NCHW tensor, got shape {arr.shape}")
    return arr


def check_tensor(x: np.ndarray, allow_empty_channels: bool = False) -> None:
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ShapeError(f"expected a rank-4 NCHW array, got {getattr(x, 'shape', type(x))}")
    n, c, h, w = x.shape
    if min(n, h, w) < 1 or (c < 1 and not allow_empty_channels):
        raise ShapeError(f"all dimensions must be >= 1, got {x.shape}")


def split_channels(x: np.ndarray, indexes: Sequence[int]) -> list[np.ndarray]:
    """Split ``x`` along channels into consecutive groups of ``indexes`` sizes.

    Zero-sized groups are allowed and come back as (N, 0, H, W) arrays.
    """
    check_tensor(x, allow_empty_channels=True)
    if any(int(i) < 0 for i in indexes):
        raise ShapeError(f"negative channel count in {tuple(indexes)}")
    if sum(int(i) for i in indexes) != x.shape[1]:
        raise ShapeError(f"split sizes {tuple(indexes)} do not sum to C={x.shape[1]}")
    parts = []
    start = 0
    for size in indexes:
        parts.append(x[:, start:start + int(size)])
        start += int(size)
    return parts


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ShapeError("concat_channels needs at least one part")
    for p in parts:
        check_tensor(p, allow_empty_channels=True)
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        if (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise ShapeError(
                f"cannot concat {p.shape} with N,H,W=({n},{h},{w})"
            )
    return np.ascontiguousarray(np.concatenate(parts, axis=1))


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Mean over H and W, summed row by row, left to right."""
    check_tensor(x)
    n, c, h, w = x.shape
    flat = x.reshape(n, c, h * w)
    acc = np.zeros((n, c), dtype=x.dtype)
    # explicit sequential accumulation keeps the summation order fixed
    for i in range(h * w):
        acc += flat[:, :, i]
    return (acc / x.dtype.type(h * w)).reshape(n, c, 1, 1)


def splitmix64(seed: int, count: int) -> np.ndarray:
    """``count`` outputs of the SplitMix64 generator started at ``seed``.

    Output i is mix(seed + (i + 1) * 0x9E3779B97F4A7C15) with the standard
    Stafford variant-13 finalizer, computed modulo 2**64.
    """
    state = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    z = state + np.arange(1, count + 1, dtype=np.uint64) * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def seeded_random(shape, seed: int, dist: str = "uniform", dtype=np.float32) -> np.ndarray:
    """Platform-independent fixture values.

    uniform: top 24 bits (float32) or 53 bits (float64) of each SplitMix64
    word scaled by 2**-24 / 2**-53, so values lie in [0, 1).
    normal: Box-Muller over consecutive word pairs (u1 from the even word,
    mapped to (0, 1]; u2 from the odd word), cosine then sine output.
    """
    shape = tuple(int(s) for s in shape)
    count = int(np.prod(shape, dtype=np.int64))
    dtype = np.dtype(dtype)
    if dist == "uniform":
        words = splitmix64(seed, count)
        if dtype == np.float32:
            vals = (words >> np.uint64(40)).astype(np.float32) * np.float32(2.0**-24)
        else:
            vals = (words >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return vals.astype(dtype).reshape(shape)
    if dist == "normal":
        pairs = (count + 1) // 2
        words = splitmix64(seed, 2 * pairs)
        unit = (words >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u1 = 1.0 - unit[0::2]
        u2 = unit[1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:count].astype(dtype).reshape(shape)
    raise ValueError(f"unknown distribution {dist!r}")


def checksum(x: np.ndarray) -> str:
    """64-bit hex digest of the little-endian bytes of ``x``."""
    data = np.ascontiguousarray(x)
    data = data.astype(data.dtype.newbyteorder("<"), copy=False)
    return hashlib.blake2b(data.tobytes(), digest_size=8).hexdigest()


def default_threads() -> int:
    value = os.environ.get(THREADS_ENV)
    if not value:
        return 1
    threads = int(value)
    if threads < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1, got {value!r}")
    return threads


def map_batch(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
              threads: int | None = None) -> np.ndarray:
    """Apply ``fn`` to each batch item separately and restack.

    Every item goes through the exact same computation whatever the worker
    count, so results are bit-identical for any ``threads``.
    """
    items = [x[i:i + 1] for i in range(x.shape[0])]
    return np.concatenate(parallel_map(fn, items, threads), axis=0)


def parallel_map(fn: Callable, items: Sequence, threads: int | None = None) -> list:
    threads = default_threads() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
