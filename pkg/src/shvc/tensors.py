"""Channel-major CHW tensors and lossless space-to-depth reorder operators.

Two downsampling reorders are provided.  ``pixel_unshuffle_f`` is the
classic space-to-depth: output channels are grouped by source channel,
then spatial offset.  ``subpixel_unshuffle_g`` groups by spatial offset
first, so consecutive runs of C channels (*sub-blocks*) share one offset
and can be modelled jointly as a unit.  Both are element bijections and
are implemented as pure index remappings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor dimensions are incompatible with an operator."""


@dataclass(frozen=True)
class SubBlockLayout:
    """Describes the sub-block structure of a k-downsampled tensor."""

    k: int
    channels: int  # channels per sub-block

    def __post_init__(self):
        if self.k < 1 or self.channels < 1:
            raise ShapeError(f"invalid layout k={self.k} C={self.channels}")

    @property
    def num_subblocks(self) -> int:
        return self.k * self.k

    @property
    def total_channels(self) -> int:
        return self.channels * self.k * self.k

    def subblock_order(self) -> list[tuple[int, int]]:
        """Spatial offsets visited by sub-block index, in raster order."""
        return [(i // self.k, i % self.k) for i in range(self.num_subblocks)]


def _check_divisible(t: np.ndarray, k: int) -> None:
    if t.ndim != 3:
        raise ShapeError(f"expected CHW tensor, got shape {t.shape}")
    _, h, w = t.shape
    if h % k or w % k:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by k={k}")


def pixel_unshuffle_f(t: np.ndarray, k: int) -> np.ndarray:
    """Space-to-depth: (C,H,W) -> (C*k*k, H/k, W/k), grouped by channel.

    Output channel n holds input channel n // k**2 at spatial offset
    ((n // k) % k, n % k).
    """
    _check_divisible(t, k)
    c, h, w = t.shape
    v = t.reshape(c, h // k, k, w // k, k)
    return np.ascontiguousarray(v.transpose(0, 2, 4, 1, 3)).reshape(
        c * k * k, h // k, w // k)


def pixel_shuffle_f_inv(t: np.ndarray, k: int, channels: int) -> np.ndarray:
    """Inverse of :func:`pixel_unshuffle_f`."""
    ckk, h, w = t.shape
    if ckk != channels * k * k:
        raise ShapeError(f"expected {channels * k * k} channels, got {ckk}")
    v = t.reshape(channels, k, k, h, w)
    return np.ascontiguousarray(v.transpose(0, 3, 1, 4, 2)).reshape(
        channels, h * k, w * k)


def subpixel_unshuffle_g(t: np.ndarray, k: int) -> np.ndarray:
    """Sub-block space-to-depth: (C,H,W) -> (C*k*k, H/k, W/k).

    Output channel n holds input channel n % C at spatial offset
    ((n // (C*k)) % k, (n // C) % k); consecutive groups of C channels
    share one offset, forming the sub-blocks.
    """
    _check_divisible(t, k)
    c, h, w = t.shape
    v = t.reshape(c, h // k, k, w // k, k)
    return np.ascontiguousarray(v.transpose(2, 4, 0, 1, 3)).reshape(
        c * k * k, h // k, w // k)


def subpixel_shuffle_g_inv(t: np.ndarray, k: int, channels: int) -> np.ndarray:
    """Inverse of :func:`subpixel_unshuffle_g`; exact on integer data."""
    ckk, h, w = t.shape
    if ckk != channels * k * k:
        raise ShapeError(f"expected {channels * k * k} channels, got {ckk}")
    v = t.reshape(k, k, channels, h, w)
    return np.ascontiguousarray(v.transpose(2, 3, 0, 4, 1)).reshape(
        channels, h * k, w * k)


def f_g_permutation(c: int, k: int) -> np.ndarray:
    """Permutation relating the two reorders.

    ``perm[n]`` is the f-output channel holding the same element as
    g-output channel n, i.e. g(t)[n] == f(t)[perm[n]] for every tensor.
    """
    if c < 1 or k < 1:
        raise ShapeError(f"invalid c={c} k={k}")
    n = np.arange(c * k * k)
    return (n % c) * k * k + n // c


def subblock_view(t: np.ndarray, i: int, channels: int) -> np.ndarray:
    """Channels [i*C, (i+1)*C) of a g-downsampled tensor, as a view."""
    if t.shape[0] % channels:
        raise ShapeError(f"{t.shape[0]} channels not divisible by C={channels}")
    num = t.shape[0] // channels
    if not 0 <= i < num:
        raise IndexError(f"sub-block index {i} out of range [0, {num})")
    return t[i * channels:(i + 1) * channels]
