"""Attention-based aggregation of unordered point features into a 2D
structured feature map.

A learnable query set attends over the per-point features with h
independent heads; each head yields a k x d matrix and the h matrices are
stacked as channels. Before attending, the feature rows are put into
canonical (lexicographic) order, so the summation order inside the
attention products never depends on the caller's point order and the
output is bitwise permutation-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .params import Tensor, fanin_uniform, gaussian

QUERY_INIT_STD = 0.02


@dataclass
class StructuredFeatureMap:
    values: Tensor  # (h, k, d)


@dataclass
class FSNetParams:
    query_set: Tensor          # (k, c_in)
    wq: list                   # h tensors (c_in, d)
    wk: list
    wv: list

    @staticmethod
    def init(rng, heads, k, d, c_in, dtype):
        if heads < 1 or k < 1 or d < 1:
            raise ValueError("heads, k, d must be positive")
        return FSNetParams(
            query_set=gaussian(rng, (k, c_in), QUERY_INIT_STD, dtype),
            wq=[fanin_uniform(rng, (c_in, d), c_in, dtype) for _ in range(heads)],
            wk=[fanin_uniform(rng, (c_in, d), c_in, dtype) for _ in range(heads)],
            wv=[fanin_uniform(rng, (c_in, d), c_in, dtype) for _ in range(heads)],
        )

    @property
    def heads(self):
        return len(self.wq)


def aggregate(features, p: FSNetParams):
    """Aggregate (N, c_in) point features into a structured feature map.

    Returns (StructuredFeatureMap, attention weights Tensor (h, k, N))
    with the weight columns in the caller's original point order.
    """
    n, c_in = features.data.shape
    if n < 1:
        raise ValueError("need at least one point feature row")
    if c_in != p.query_set.data.shape[1]:
        raise ValueError(
            f"feature width {c_in} does not match query width {p.query_set.data.shape[1]}"
        )
    d = p.wq[0].data.shape[1]
    # canonical row order: lexicographic over feature columns
    order = np.lexsort(features.data.T[::-1])
    inv = np.argsort(order, kind="stable")
    feats = T.gather_rows(features, order)

    scale = Tensor(np.asarray(1.0 / np.sqrt(d), dtype=features.dtype))
    head_maps, head_weights = [], []
    for h in range(p.heads):
        q = T.matmul(p.query_set, p.wq[h])       # (k, d)
        key = T.matmul(feats, p.wk[h])           # (N, d)
        val = T.matmul(feats, p.wv[h])
        logits = T.mul(T.matmul(q, T.transpose(key)), scale)   # (k, N)
        attn = T.softmax(logits, axis=1)
        head_maps.append(T.reshape(T.matmul(attn, val), (1,) + (q.data.shape[0], d)))
        # restore original column order for export
        attn_orig = T.transpose(T.gather_rows(T.transpose(attn), inv))
        head_weights.append(T.reshape(attn_orig, (1,) + attn.data.shape))
    sfm = T.concat(head_maps, axis=0)
    weights = T.concat(head_weights, axis=0)
    return StructuredFeatureMap(sfm), weights


def attention_heatmap(weights, channel):
    """Per-point weight of one head: the channel's weights averaged over
    the query rows and min-max normalized to [0, 1]. A degenerate span
    (all equal) maps to all zeros."""
    w = weights.data if isinstance(weights, Tensor) else np.asarray(weights)
    if not 0 <= channel < w.shape[0]:
        raise IndexError(f"channel {channel} out of range for {w.shape[0]} heads")
    per_point = w[channel].mean(axis=0)
    lo, hi = per_point.min(), per_point.max()
    if hi - lo == 0.0:
        return np.zeros_like(per_point)
    return (per_point - lo) / (hi - lo)
