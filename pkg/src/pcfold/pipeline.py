"""End-to-end model: point encoder, feature-map aggregation, coarse
decoding, sparse encoding, feedback expansion, and offset regression,
plus the joint Chamfer loss and the max-pooled-vector coarse baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import decoder, fsnet, geometry, ifnet, sparse, tensor as T
from .config import PipelineConfig
from .nn import LRELU_SLOPE, EdgeConvLayer, Linear
from .params import Tensor
from .rng import DOMAIN_INIT, stream


@dataclass
class ModelParams:
    encoder1: EdgeConvLayer
    encoder2: EdgeConvLayer
    fsnet: fsnet.FSNetParams
    decoder: decoder.DecoderParams
    sparse_enc: sparse.SparseEncoderParams
    expansion: ifnet.ExpansionParams
    offset: ifnet.OffsetParams
    gfv: list  # two Linear layers: c_enc -> hidden -> 3*N_c

    @staticmethod
    def init(cfg: PipelineConfig, seed=0, rng=None):
        cfg.validate()
        rng = rng if rng is not None else stream(seed, DOMAIN_INIT)
        dtype = np.dtype(cfg.dtype)
        enc_params = sparse.SparseEncoderParams.init(
            rng, cfg.c_enc, cfg.c_coarse, cfg.kappa, dtype, width=cfg.sparse_width)
        return ModelParams(
            encoder1=EdgeConvLayer.init(rng, 3, cfg.c_enc, cfg.kappa, dtype),
            encoder2=EdgeConvLayer.init(rng, cfg.c_enc, cfg.c_enc, cfg.kappa, dtype),
            fsnet=fsnet.FSNetParams.init(rng, cfg.heads, cfg.k, cfg.d, cfg.c_enc, dtype),
            decoder=decoder.DecoderParams.init(rng, cfg.heads, cfg.k, cfg.d, cfg.c_coarse, dtype),
            sparse_enc=enc_params,
            expansion=ifnet.ExpansionParams.init(
                rng, enc_params.out_width, cfg.c_expand, cfg.ratio, cfg.steps, dtype),
            offset=ifnet.OffsetParams.init(rng, cfg.c_expand, dtype),
            gfv=[Linear.init(rng, cfg.c_enc, 128, dtype),
                 Linear.init(rng, 128, 3 * cfg.n_coarse, dtype)],
        )


@dataclass
class Diagnostics:
    feature_map: object = None
    attention: Tensor = None
    input_features: Tensor = None
    coarse: object = None
    states: list = field(default_factory=list)
    selected: np.ndarray = None


@dataclass
class ForwardResult:
    coarse_points: Tensor   # (N_c, 3)
    sparse_points: Tensor   # (N_s, 3)
    dense_points: Tensor    # (N_d, 3)
    diagnostics: Diagnostics = None


def _input_tensor(points, dtype):
    pts = points.points if isinstance(points, geometry.PointCloud) else np.asarray(points)
    return Tensor(pts.astype(dtype))


def encode_points(points_t, params: ModelParams):
    """Per-point features from two dynamic-graph edge convolutions."""
    h1 = params.encoder1(points_t, graph_source=points_t.data)
    return params.encoder2(h1, graph_source=h1.data)


def coarse_stage(points_t, params: ModelParams):
    feats = encode_points(points_t, params)
    sfm, attn = fsnet.aggregate(feats, params.fsnet)
    coarse = decoder.decode(sfm, params.decoder)
    return feats, sfm, attn, coarse


def forward(points, params: ModelParams, cfg: PipelineConfig):
    """Run the full pipeline on one partial cloud.

    Returns a ForwardResult whose point tensors participate in the
    differentiation graph of all parameters.
    """
    n = len(points) if isinstance(points, geometry.PointCloud) else np.asarray(points).shape[0]
    if n < cfg.kappa:
        raise ValueError(f"input has {n} points but kappa={cfg.kappa}")
    pts = _input_tensor(points, np.dtype(cfg.dtype))
    feats, sfm, attn, coarse = coarse_stage(pts, params)
    sres = sparse.sparse_encode(
        pts, feats, coarse.coarse_points, coarse.coarse_features, cfg.n_sparse, params.sparse_enc)
    dense_features, states = ifnet.expand(
        sres.sparse_features, params.expansion, mode=cfg.expansion_mode, steps=cfg.steps)
    dense_points = ifnet.offset_regress(sres.sparse_points, dense_features, params.offset)
    return ForwardResult(
        coarse_points=coarse.coarse_points,
        sparse_points=sres.sparse_points,
        dense_points=dense_points,
        diagnostics=Diagnostics(
            feature_map=sfm, attention=attn, input_features=feats,
            coarse=coarse, states=states, selected=sres.selected),
    )


def gfv_baseline_forward(points, params: ModelParams, cfg: PipelineConfig):
    """Coarse baseline: max-pool the point features to a single vector and
    decode it with an MLP (replaces the feature-map path, ablation only)."""
    pts = _input_tensor(points, np.dtype(cfg.dtype))
    feats = encode_points(pts, params)
    pooled = T.reshape(T.reduce_max(feats, axis=0), (1, feats.data.shape[1]))
    h = T.leaky_relu(params.gfv[0](pooled), LRELU_SLOPE)
    flat = params.gfv[1](h)
    return T.reshape(flat, (cfg.n_coarse, 3))


def loss(result_or_clouds, ground_truth, coarse_term=False):
    """Joint training loss: Chamfer(sparse, gt) + Chamfer(dense, gt), with
    an optional extra Chamfer(coarse, gt) term."""
    res = result_or_clouds
    total = T.add(geometry.chamfer_t(res.sparse_points, ground_truth),
                  geometry.chamfer_t(res.dense_points, ground_truth))
    if coarse_term:
        total = T.add(total, geometry.chamfer_t(res.coarse_points, ground_truth))
    return total
