"""Coarse decoding: a small 2D UNet over the structured feature map plus
a stride-2 regression convolution that emits a 3 x (k/2) x (d/2) grid of
coordinates, reshaped row-major into the coarse point cloud.

Layout (desk defaults, channels in -> out):
  head   conv3x3  h  -> 32   @ k x d        (skip A)
  down1  conv3x3 s2 32 -> 64 @ k/2 x d/2    (skip B)
  down2  conv3x3 s2 64 -> 64 @ k/4 x d/4
  bottleneck conv3x3 64 -> 64
  up1    nearest x2 + concat skip B + conv3x3 128 -> 32
  up2    nearest x2 + concat skip A + conv3x3 64  -> C_c
  regress conv3x3 s2 C_c -> 3 (linear)
No normalization layers; leaky-relu everywhere except the linear head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import LRELU_SLOPE
from .params import Tensor, fanin_uniform


@dataclass
class DecoderParams:
    head: Tensor
    down1: Tensor
    down2: Tensor
    bottleneck: Tensor
    up1: Tensor
    up2: Tensor
    regress: Tensor

    @staticmethod
    def init(rng, heads, k, d, c_coarse, dtype):
        if k % 2 or d % 2:
            raise ValueError(f"k and d must be even, got k={k}, d={d}")
        if k < 4 or d < 4:
            raise ValueError("k and d must be at least 4")

        def conv(c_out, c_in):
            return fanin_uniform(rng, (c_out, c_in, 3, 3), c_in * 9, dtype)

        return DecoderParams(
            head=conv(32, heads),
            down1=conv(64, 32),
            down2=conv(64, 64),
            bottleneck=conv(64, 64),
            up1=conv(32, 64 + 64),
            up2=conv(c_coarse, 32 + 32),
            regress=conv(3, c_coarse),
        )


@dataclass
class CoarseResult:
    coarse_features: Tensor   # (C_c, k, d)
    grid: Tensor              # (3, k/2, d/2)
    coarse_points: Tensor     # (N_c, 3), row-major reshape of grid


def _upsample2x(x):
    return T.repeat_axis(T.repeat_axis(x, 2, axis=1), 2, axis=2)


def decode(sfm, p: DecoderParams):
    x = sfm.values if hasattr(sfm, "values") else sfm
    a = T.leaky_relu(T.conv2d(x, p.head, stride=1, padding=1), LRELU_SLOPE)
    b = T.leaky_relu(T.conv2d(a, p.down1, stride=2, padding=1), LRELU_SLOPE)
    c = T.leaky_relu(T.conv2d(b, p.down2, stride=2, padding=1), LRELU_SLOPE)
    c = T.leaky_relu(T.conv2d(c, p.bottleneck, stride=1, padding=1), LRELU_SLOPE)
    u1 = T.concat([_upsample2x(c), b], axis=0)
    u1 = T.leaky_relu(T.conv2d(u1, p.up1, stride=1, padding=1), LRELU_SLOPE)
    u2 = T.concat([_upsample2x(u1), a], axis=0)
    feat = T.leaky_relu(T.conv2d(u2, p.up2, stride=1, padding=1), LRELU_SLOPE)
    grid = T.conv2d(feat, p.regress, stride=2, padding=1)
    n_c = grid.data.shape[1] * grid.data.shape[2]
    pts = T.transpose(T.reshape(grid, (3, n_c)))
    return CoarseResult(coarse_features=feat, grid=grid, coarse_points=pts)


def extract_patch_region(grid, window):
    """Points whose grid cells fall inside window=(row, col, height, width)."""
    g = grid.data if isinstance(grid, Tensor) else np.asarray(grid)
    r, c, h, w = window
    _, gh, gw = g.shape
    if r < 0 or c < 0 or h < 1 or w < 1 or r + h > gh or c + w > gw:
        raise ValueError(f"window {window} out of bounds for grid {gh}x{gw}")
    patch = g[:, r:r + h, c:c + w]
    return patch.reshape(3, -1).T.copy()
