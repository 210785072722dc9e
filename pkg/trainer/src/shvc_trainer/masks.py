"""Causal 3D convolution machinery over the sub-block axis.

The sub-block index plays the role of the depth dimension.  A-type masks
let a position see strictly earlier sub-blocks; B-type masks include the
current one.  Depth indices are 1-based in the keep rule: for kernel
depth kd, A keeps d <= floor(kd / 2) and B keeps d <= ceil(kd / 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class MaskSpec:
    mask_type: str      # "A" | "B"
    depth: int          # kernel depth (sub-block axis)
    height: int = 3
    width: int = 3
    stride_c: int = 1   # channels per sub-block, for the off-center op

    def __post_init__(self):
        if self.mask_type not in ("A", "B"):
            raise ValueError(f"unknown mask type {self.mask_type!r}")
        if min(self.depth, self.height, self.width, self.stride_c) < 1:
            raise ValueError("mask dimensions must be positive")

    @property
    def kept_slices(self) -> int:
        if self.mask_type == "A":
            return self.depth // 2
        return (self.depth + 1) // 2


def kernel_mask(spec: MaskSpec, dtype=torch.float64) -> torch.Tensor:
    """(1, 1, depth, 1, 1) multiplier zeroing non-causal depth slices."""
    keep = spec.kept_slices
    m = torch.zeros(spec.depth, dtype=dtype)
    m[:keep] = 1.0
    return m.view(1, 1, -1, 1, 1)


def masked_conv3d(volume: torch.Tensor, kernel: torch.Tensor,
                  bias: torch.Tensor | None, spec: MaskSpec) -> torch.Tensor:
    """Same-padded conv3d with the kernel point-wise masked.

    `volume` is (N, C, D, H, W) with D the sub-block axis; `kernel` is
    (out, C, depth, height, width) matching `spec`.
    """
    if kernel.shape[2:] != (spec.depth, spec.height, spec.width):
        raise ValueError(
            f"kernel dims {tuple(kernel.shape[2:])} do not match mask spec")
    masked = kernel * kernel_mask(spec, kernel.dtype)
    pad = (spec.depth // 2, spec.height // 2, spec.width // 2)
    return F.conv3d(volume, masked, bias, padding=pad)


def off_center_conv(volume: torch.Tensor, weight: torch.Tensor,
                    bias: torch.Tensor | None, channels: int) -> torch.Tensor:
    """Strided causal input convolution over flattened sub-blocks.

    `volume` is (N, C*k^2, H, W) in sub-block channel order; a zero block
    of C channels is prepended and the kernel strides by C, so output
    slot i is a function of sub-block i - 1 only (slot 0 sees just the
    zero block).  `weight` is (f, C, 3, 3); returns (N, f, k^2, H, W).
    """
    n, total, h, w = volume.shape
    if total % channels:
        raise ValueError(f"{total} channels not divisible by {channels}")
    padded = F.pad(volume, (0, 0, 0, 0, channels, 0))
    vol5 = padded.unsqueeze(1)                      # (N, 1, D+C, H, W)
    kernel = weight.unsqueeze(1)                    # (f, 1, C, 3, 3)
    out = F.conv3d(vol5, kernel, bias, stride=(channels, 1, 1),
                   padding=(0, 1, 1))
    return out[:, :, :total // channels]            # trim the extra slot
