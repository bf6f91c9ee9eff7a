"""Sparse encoding: fuse the partial input with the coarse completion into
a sparse, relatively uniform point set and compute its features through a
neighbor-encoding path (two dynamic-graph edge convolutions) and a
feature-reuse path (revisiting input and coarse features, grouped and
refined by self-attention)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry, tensor as T
from .nn import LRELU_SLOPE, EdgeConvLayer, Linear, SelfAttention
from .params import Tensor, fanin_uniform


@dataclass
class SparseEncoderParams:
    # neighbor encoding path
    edge1: EdgeConvLayer
    edge2: EdgeConvLayer
    # feature reuse path
    reuse_in1: Linear
    reuse_in2: Linear
    reuse_coarse1: Tensor      # conv3x3 C_c -> w
    reuse_coarse2: Tensor      # conv3x3 stride-2 w -> w, aligns k x d to k/2 x d/2
    group_fuse: Linear         # (2w) -> 2w after neighbor grouping
    sa1: SelfAttention
    sa2: SelfAttention
    kappa: int

    @staticmethod
    def init(rng, c_in, c_coarse, kappa, dtype, width=64):
        return SparseEncoderParams(
            edge1=EdgeConvLayer.init(rng, 3, width, kappa, dtype),
            edge2=EdgeConvLayer.init(rng, width, width, kappa, dtype),
            reuse_in1=Linear.init(rng, c_in, width, dtype),
            reuse_in2=Linear.init(rng, width, width, dtype),
            reuse_coarse1=fanin_uniform(rng, (width, c_coarse, 3, 3), c_coarse * 9, dtype),
            reuse_coarse2=fanin_uniform(rng, (width, width, 3, 3), width * 9, dtype),
            group_fuse=Linear.init(rng, 2 * width, 2 * width, dtype),
            sa1=SelfAttention.init(rng, 2 * width, dtype),
            sa2=SelfAttention.init(rng, 2 * width, dtype),
            kappa=kappa,
        )

    @property
    def width(self):
        return self.reuse_in1.weight.data.shape[1]

    @property
    def out_width(self):
        # neighbor path width + grouped reuse width
        return self.width + 2 * self.width


@dataclass
class SparseResult:
    sparse_points: Tensor    # (N_s, 3)
    sparse_features: Tensor  # (N_s, C_s)
    selected: np.ndarray     # indices into the merged (input | coarse) ordering


def merge_and_sample(input_points, coarse_points, n_sparse):
    """Concatenate input and coarse clouds (input rows first) and pick a
    sparse subset with farthest point sampling starting at index 0.

    Both arguments are tensors; gradients flow into the coarse coordinates
    through the row gather.
    """
    total = input_points.data.shape[0] + coarse_points.data.shape[0]
    if n_sparse > total:
        raise ValueError(f"cannot sample {n_sparse} from {total} merged points")
    merged = T.concat([input_points, coarse_points], axis=0)
    selected = geometry.fps(merged.data, n_sparse, start=0)
    return T.gather_rows(merged, selected), selected, merged


def edgeconv_encode(sparse_points, p: SparseEncoderParams):
    """Two stacked edge convolutions; the first builds its graph from the
    coordinates, the second from the first layer's features."""
    h1 = p.edge1(sparse_points, graph_source=sparse_points.data)
    return p.edge2(h1, graph_source=h1.data)


def feature_reuse(input_features, coarse_features, sparse_points, selected, p: SparseEncoderParams):
    """Revisit input features and coarse features for the selected sparse
    points: per-point conv stacks equalize both tables to a common width,
    rows are gathered by the merged-ordering indices, each row is joined
    with the max-pooled features of its kappa nearest sparse neighbors,
    and two self-attention units refine the result."""
    fi = T.leaky_relu(p.reuse_in1(input_features), LRELU_SLOPE)
    fi = T.leaky_relu(p.reuse_in2(fi), LRELU_SLOPE)

    fc = T.leaky_relu(T.conv2d(coarse_features, p.reuse_coarse1, stride=1, padding=1), LRELU_SLOPE)
    fc = T.leaky_relu(T.conv2d(fc, p.reuse_coarse2, stride=2, padding=1), LRELU_SLOPE)
    w = fc.data.shape[0]
    n_coarse = fc.data.shape[1] * fc.data.shape[2]
    fc = T.transpose(T.reshape(fc, (w, n_coarse)))  # row-major, matches coarse point order

    merged = T.concat([fi, fc], axis=0)
    rows = T.gather_rows(merged, selected)

    n_s = rows.data.shape[0]
    kappa = min(p.kappa, n_s)
    nbr = geometry.knn(sparse_points.data, sparse_points.data, kappa)
    nbr_feats = T.gather_rows(rows, nbr.reshape(-1))
    nbr_feats = T.reshape(nbr_feats, (n_s, kappa, rows.data.shape[1]))
    pooled = T.reduce_max(nbr_feats, axis=1)

    grouped = T.leaky_relu(p.group_fuse(T.concat([rows, pooled], axis=1)), LRELU_SLOPE)
    return p.sa2(p.sa1(grouped))


def sparse_encode(input_points, input_features, coarse_points, coarse_features,
                  n_sparse, p: SparseEncoderParams):
    """Full sparse stage: sample the merged cloud, then concatenate the
    neighbor-encoding and feature-reuse features along the channel axis."""
    sparse_points, selected, _ = merge_and_sample(input_points, coarse_points, n_sparse)
    ne = edgeconv_encode(sparse_points, p)
    fr = feature_reuse(input_features, coarse_features, sparse_points, selected, p)
    return SparseResult(
        sparse_points=sparse_points,
        sparse_features=T.concat([ne, fr], axis=1),
        selected=selected,
    )
