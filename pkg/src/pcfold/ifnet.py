"""Feature expansion with iterative feedback.

Sparse features are width-reduced, expanded once into initial dense
features, then refined by a chain of feedback blocks. Each block
down-projects the dense features, attends to the sparse-domain error,
lifts the error back up and adds it to the dense features. The error
path (the self-attention value projection and the error upsampling unit)
is deliberately bias-free and code-free, so a block whose down-projection
exactly reproduces the sparse features is a bitwise fixed point.

Two baseline expansion units are provided for ablations: plain
duplication (the initial upsampling alone) and multi-branch expansion
(r independent per-branch maps, interleaved along the point axis).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import LRELU_SLOPE, Linear, SelfAttention
from .params import Tensor, fanin_uniform, zeros

EXPANSION_MODES = ("feedback", "duplication", "multibranch")


@dataclass
class UpUnitParams:
    """Row duplication followed by a shared linear map; the general unit
    adds a per-replica positional code and bias, the error-path unit has
    neither so zero maps to zero exactly."""

    lin: Linear
    codes: Tensor | None  # (r, c), added to replica j before the map
    ratio: int

    @staticmethod
    def init(rng, c, ratio, dtype, with_codes=True):
        lin = Linear.init(rng, c, c, dtype, bias=with_codes)
        codes = fanin_uniform(rng, (ratio, c), c, dtype) if with_codes else None
        return UpUnitParams(lin=lin, codes=codes, ratio=ratio)


@dataclass
class DownUnitParams:
    lin: Linear  # (r*c, c)
    ratio: int

    @staticmethod
    def init(rng, c, ratio, dtype):
        return DownUnitParams(Linear.init(rng, ratio * c, c, dtype, bias=False), ratio)


@dataclass
class FeedbackBlockParams:
    down: DownUnitParams
    sa: SelfAttention
    up: UpUnitParams

    @staticmethod
    def init(rng, c, ratio, dtype):
        return FeedbackBlockParams(
            down=DownUnitParams.init(rng, c, ratio, dtype),
            sa=SelfAttention.init(rng, c, dtype),
            up=UpUnitParams.init(rng, c, ratio, dtype, with_codes=False),
        )


@dataclass
class ExpansionParams:
    reduce: Linear                 # C_s -> c
    initial_up: UpUnitParams
    blocks: list                   # T FeedbackBlockParams (untied)
    branches: list                 # r Linear branches for the multibranch baseline

    @staticmethod
    def init(rng, c_sparse, c, ratio, steps, dtype):
        return ExpansionParams(
            reduce=Linear.init(rng, c_sparse, c, dtype),
            initial_up=UpUnitParams.init(rng, c, ratio, dtype, with_codes=True),
            blocks=[FeedbackBlockParams.init(rng, c, ratio, dtype) for _ in range(steps)],
            branches=[Linear.init(rng, c, c, dtype) for _ in range(ratio)],
        )


@dataclass
class FeedbackState:
    sparse: Tensor  # (N_s, c)
    dense: Tensor   # (r*N_s, c)
    step: int


def up(features, p: UpUnitParams):
    """Each row duplicated r times consecutively; replica j optionally
    receives code j before the shared linear map."""
    n = features.data.shape[0]
    x = T.repeat_axis(features, p.ratio, axis=0)
    if p.codes is not None:
        x = T.add(x, T.gather_rows(p.codes, np.tile(np.arange(p.ratio), n)))
    return p.lin(x)


def down(features, p: DownUnitParams):
    """Each consecutive group of r rows concatenated (width r*c) and mapped
    back to width c."""
    n, c = features.data.shape
    if n % p.ratio:
        raise ValueError(f"row count {n} not divisible by ratio {p.ratio}")
    return p.lin(T.reshape(features, (n // p.ratio, p.ratio * c)))


def feedback_block(state: FeedbackState, p: FeedbackBlockParams):
    sparse_next = down(state.dense, p.down)
    err_sparse = p.sa(T.sub(sparse_next, state.sparse))
    err_dense = up(err_sparse, p.up)
    return FeedbackState(
        sparse=sparse_next,
        dense=T.add(state.dense, err_dense),
        step=state.step + 1,
    )


def expand(sparse_features, p: ExpansionParams, mode="feedback", steps=None):
    """Expand (N_s, C_s) sparse features to (r*N_s, c) dense features.

    Returns (dense features, list of FeedbackState per step including the
    initial state). ``steps`` defaults to the number of configured blocks.
    """
    if mode not in EXPANSION_MODES:
        raise ValueError(f"unknown expansion mode {mode!r}; expected one of {EXPANSION_MODES}")
    if steps is None:
        steps = len(p.blocks)
    if mode == "feedback" and steps > len(p.blocks):
        raise ValueError(f"requested {steps} feedback steps but only {len(p.blocks)} blocks configured")
    reduced = T.leaky_relu(p.reduce(sparse_features), LRELU_SLOPE)

    if mode == "multibranch":
        n, c = reduced.data.shape
        outs = [T.reshape(T.leaky_relu(b(reduced), LRELU_SLOPE), (n, 1, c)) for b in p.branches]
        dense = T.reshape(T.concat(outs, axis=1), (n * len(p.branches), c))
        return dense, [FeedbackState(sparse=reduced, dense=dense, step=0)]

    state = FeedbackState(sparse=reduced, dense=up(reduced, p.initial_up), step=0)
    states = [state]
    if mode == "feedback":
        for t in range(steps):
            state = feedback_block(state, p.blocks[t])
            states.append(state)
    return state.dense, states


@dataclass
class OffsetParams:
    lin1: Linear
    lin2: Linear  # -> 3, linear output

    @staticmethod
    def init(rng, c, dtype, hidden=None):
        hidden = hidden or c
        return OffsetParams(
            lin1=Linear.init(rng, c, hidden, dtype),
            lin2=Linear.init(rng, hidden, 3, dtype),
        )


def offset_regress(sparse_points, dense_features, p: OffsetParams):
    """Dense points = sparse points replicated r times plus regressed
    residual offsets."""
    n_s = sparse_points.data.shape[0]
    n_d = dense_features.data.shape[0]
    if n_d % n_s:
        raise ValueError(f"dense row count {n_d} is not a multiple of sparse count {n_s}")
    ratio = n_d // n_s
    replicated = T.repeat_axis(sparse_points, ratio, axis=0)
    offsets = p.lin2(T.leaky_relu(p.lin1(dense_features), LRELU_SLOPE))
    return T.add(replicated, offsets)


def intermediate_clouds(states, sparse_points, p: OffsetParams):
    """Dense clouds regressed from every recorded feedback step, for
    inspection only (never part of the loss)."""
    return [offset_regress(sparse_points, s.dense, p) for s in states]
