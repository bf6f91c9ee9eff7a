"""Shared neural building blocks: linear layers, EdgeConv, and the
gated self-attention unit used by the sparse-encoding and expansion
stages."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry, tensor as T
from .params import Tensor, fanin_uniform, zeros

LRELU_SLOPE = 0.2


@dataclass
class Linear:
    weight: Tensor  # (in, out)
    bias: Tensor | None = None

    @staticmethod
    def init(rng, n_in, n_out, dtype, bias=True):
        w = fanin_uniform(rng, (n_in, n_out), n_in, dtype)
        b = zeros((n_out,), dtype) if bias else None
        return Linear(w, b)

    def __call__(self, x):
        y = T.matmul(x, self.weight)
        if self.bias is not None:
            y = T.add(y, self.bias)
        return y


@dataclass
class EdgeConvLayer:
    """One dynamic-graph edge convolution: for each point, the elementwise
    max over its kappa neighbors of a linear map of [x_j - x_i, x_i]."""

    lin: Linear
    kappa: int

    @staticmethod
    def init(rng, n_in, n_out, kappa, dtype):
        return EdgeConvLayer(Linear.init(rng, 2 * n_in, n_out, dtype), kappa)

    def __call__(self, x, graph_source=None):
        """x: (N, C) features; graph_source: coordinates/features used for
        the knn graph (defaults to x.data)."""
        n = x.data.shape[0]
        if self.kappa > n:
            raise ValueError(f"kappa={self.kappa} exceeds point count {n}")
        source = x.data if graph_source is None else np.asarray(graph_source)
        idx = geometry.knn_features(source, source, self.kappa)
        xi = T.gather_rows(x, np.repeat(np.arange(n), self.kappa))
        xj = T.gather_rows(x, idx.reshape(-1))
        edge = T.concat([T.sub(xj, xi), xi], axis=1)
        h = T.leaky_relu(self.lin(edge), LRELU_SLOPE)
        h = T.reshape(h, (n, self.kappa, h.data.shape[1]))
        return T.reduce_max(h, axis=1)


@dataclass
class SelfAttention:
    """Residual self-attention with a learned scalar gate.

    y = x + gamma * softmax(Q K^T / sqrt(c')) V with channel-reduced Q, K
    (c' = max(c // 2, 1)) and a bias-free value path; gamma starts at 0 so
    the unit opens gradually and maps zero input to zero output exactly.
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    gamma: Tensor

    @staticmethod
    def init(rng, c, dtype):
        cr = max(c // 2, 1)
        return SelfAttention(
            wq=fanin_uniform(rng, (c, cr), c, dtype),
            wk=fanin_uniform(rng, (c, cr), c, dtype),
            wv=fanin_uniform(rng, (c, c), c, dtype),
            gamma=zeros((), dtype),
        )

    def __call__(self, x):
        cr = self.wq.data.shape[1]
        q = T.matmul(x, self.wq)
        k = T.matmul(x, self.wk)
        v = T.matmul(x, self.wv)
        logits = T.mul(T.matmul(q, T.transpose(k)), Tensor(np.asarray(1.0 / np.sqrt(cr), dtype=x.dtype)))
        attn = T.softmax(logits, axis=1)
        return T.add(x, T.mul(self.gamma, T.matmul(attn, v)))


def mlp2(rng, n_in, n_hidden, n_out, dtype, bias=True):
    """Two stacked linear layers (leaky-relu between) as a param pair."""
    return [Linear.init(rng, n_in, n_hidden, dtype, bias),
            Linear.init(rng, n_hidden, n_out, dtype, bias)]


def apply_mlp2(layers, x, final_linear=True):
    h = T.leaky_relu(layers[0](x), LRELU_SLOPE)
    y = layers[1](h)
    if not final_linear:
        y = T.leaky_relu(y, LRELU_SLOPE)
    return y
