"""Training loop: Adam with bias-corrected moments, stepped learning-rate
decay, seeded shuffling, and per-epoch Chamfer logging."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry, pipeline, tensor as T
from .config import PipelineConfig, TrainConfig
from .params import Tensor, flat_tensors, zero_grads
from .rng import DOMAIN_SHUFFLE, stream


class Adam:
    def __init__(self, named, cfg: TrainConfig):
        self.named = dict(named)  # name -> Tensor
        self.cfg = cfg
        self.m = {k: np.zeros_like(t.data) for k, t in self.named.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.named.items()}
        self.t = 0

    def step(self, lr):
        self.t += 1
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.named.items():
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p.data = (p.data.astype(np.float64) - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    coarse_cd: float
    dense_cd: float


@dataclass
class TrainResult:
    params: pipeline.ModelParams
    log: list = field(default_factory=list)


def _loss_for(partial, complete, params, pcfg, tcfg):
    gt = Tensor(complete.points.astype(np.dtype(pcfg.dtype)))
    if tcfg.train_stage == "coarse":
        if pcfg.coarse_mode == "gfv":
            coarse = pipeline.gfv_baseline_forward(partial, params, pcfg)
        else:
            pts = pipeline._input_tensor(partial, np.dtype(pcfg.dtype))
            _, _, _, cres = pipeline.coarse_stage(pts, params)
            coarse = cres.coarse_points
        lv = geometry.chamfer_t(coarse, gt)
        return lv, (float(lv.data), float(lv.data))
    res = pipeline.forward(partial, params, pcfg)
    lv = pipeline.loss(res, gt, coarse_term=tcfg.coarse_loss)
    coarse_cd = geometry.chamfer(res.coarse_points.data, complete.points)
    dense_cd = geometry.chamfer(res.dense_points.data, complete.points)
    return lv, (coarse_cd, dense_cd)


def train(dataset, pcfg: PipelineConfig, tcfg: TrainConfig, params=None, progress=None):
    """Train on a list of (partial, complete) PointCloud pairs.

    Batches accumulate mean gradients over their shapes before each Adam
    step; shuffling and initialization derive from tcfg.seed.
    """
    if not dataset:
        raise ValueError("empty dataset")
    pcfg.validate()
    tcfg.validate()
    if params is None:
        params = pipeline.ModelParams.init(pcfg, seed=tcfg.seed)
    named = flat_tensors(params)
    opt = Adam(named, tcfg)
    log = []
    n = len(dataset)
    for epoch in range(1, tcfg.epochs + 1):
        lr = tcfg.lr_for_epoch(epoch)
        order = stream(tcfg.seed, DOMAIN_SHUFFLE, epoch).permutation(n)
        coarse_sum = dense_sum = 0.0
        for start in range(0, n, tcfg.batch_size):
            batch = order[start:start + tcfg.batch_size]
            zero_grads(params)
            for i in batch:
                partial, complete = dataset[i]
                lv, (ccd, dcd) = _loss_for(partial, complete, params, pcfg, tcfg)
                scaled = T.mul(lv, Tensor(np.asarray(1.0 / len(batch), dtype=lv.dtype)))
                T.backward(scaled)
                coarse_sum += ccd
                dense_sum += dcd
            opt.step(lr)
        rec = EpochRecord(epoch=epoch, lr=lr, coarse_cd=coarse_sum / n, dense_cd=dense_sum / n)
        log.append(rec)
        if progress is not None:
            progress(rec)
    return TrainResult(params=params, log=log)


def evaluate_dense_cd(dataset, params, pcfg):
    """Mean dense and coarse Chamfer distance over a dataset."""
    coarse = dense = 0.0
    for partial, complete in dataset:
        res = pipeline.forward(partial, params, pcfg)
        coarse += geometry.chamfer(res.coarse_points.data, complete.points)
        dense += geometry.chamfer(res.dense_points.data, complete.points)
    n = len(dataset)
    return coarse / n, dense / n
