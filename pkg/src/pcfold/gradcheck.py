"""Central finite-difference verification of the backward pass.

``fd_check`` verifies one differentiable function against central
differences on selected entries of its leaf tensors; ``check_model`` runs
the end-to-end pipeline loss on a small 64-bit instance and reports the
worst relative error per parameter group.

Small tensors are checked exhaustively; large ones on a seeded sample of
entries (full per-scalar differencing of every convolution kernel would
take hours and is replaced by sampling plus whole-gradient directional
checks, which bound the remaining error in aggregate).
"""

from __future__ import annotations

import numpy as np

from . import pipeline, tensor as T
from .config import PipelineConfig
from .params import named_tensors
from .rng import DOMAIN_MISC, stream

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4
ABS_FLOOR = 1e-8


def rel_err(a, b, floor=ABS_FLOOR):
    diff = abs(a - b)
    if diff <= floor:
        return 0.0
    return diff / max(abs(a), abs(b))


def fd_check(fn, leaves, h=DEFAULT_STEP, max_entries=None, rng=None):
    """Compare backward gradients of scalar ``fn()`` against central
    differences for every listed leaf tensor.

    Returns the worst relative error across all checked entries. ``fn``
    must rebuild its graph from the leaves' current buffers on every call.
    """
    for t in leaves:
        t.grad = None
    out = fn()
    T.backward(out)
    worst = 0.0
    for t in leaves:
        grad = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            entries = rng.choice(n, size=max_entries, replace=False)
        else:
            entries = range(n)
        for i in entries:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn().data)
            flat[i] = orig - h
            fm = float(fn().data)
            flat[i] = orig
            fd = (fp - fm) / (2 * h)
            worst = max(worst, rel_err(fd, float(grad.reshape(-1)[i])))
    return worst


def directional_check(fn, leaves, h=DEFAULT_STEP, rng=None, trials=3):
    """Directional derivative check over all leaves jointly: compares
    g . v against a central difference along random directions v."""
    if rng is None:
        rng = np.random.default_rng(0)
    for t in leaves:
        t.grad = None
    T.backward(fn())
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in leaves]
    worst = 0.0
    for _ in range(trials):
        dirs = [rng.normal(size=t.data.shape) for t in leaves]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        backup = [t.data.copy() for t in leaves]
        for t, d in zip(leaves, dirs):
            t.data = t.data + h * d
        fp = float(fn().data)
        for t, b, d in zip(leaves, backup, dirs):
            t.data = b - h * d
        fm = float(fn().data)
        for t, b in zip(leaves, backup):
            t.data = b
        fd = (fp - fm) / (2 * h)
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        worst = max(worst, rel_err(fd, analytic))
    return worst


def gradcheck_config():
    """The small 64-bit instance used for end-to-end checking."""
    return PipelineConfig(n_input=32, n_sparse=64, dtype="float64").validate()


def _randomize(params, rng, scale=0.1):
    """Random parameters that exercise every path (gate scalars included)."""
    for _, t in named_tensors(params):
        t.data = rng.normal(0.0, scale, size=t.data.shape).astype(t.data.dtype)


def check_model(seed=0, samples_per_tensor=6, tol=DEFAULT_TOL, corrupt=False,
                cfg=None, progress=None):
    """Finite-difference check of every parameter group of the full
    pipeline loss. Returns {group name: worst relative error}.

    ``corrupt`` deliberately falsifies one backward gradient first (a
    negative control for the verification harness itself).
    """
    cfg = cfg or gradcheck_config()
    rng = stream(seed, DOMAIN_MISC, 17)
    params = pipeline.ModelParams.init(cfg, seed=seed)
    _randomize(params, rng)
    pts = rng.uniform(-0.5, 0.5, size=(cfg.n_input, 3))
    gt = T.Tensor(rng.uniform(-0.5, 0.5, size=(cfg.n_input * 2, 3)))

    def loss_fn():
        res = pipeline.forward(pts, params, cfg)
        return pipeline.loss(res, gt)

    named = list(named_tensors(params))
    for _, t in named:
        t.grad = None
    T.backward(loss_fn())
    results = {}
    for name, t in named:
        grad = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        n = flat.size
        if n > samples_per_tensor:
            entries = rng.choice(n, size=samples_per_tensor, replace=False)
        else:
            entries = np.arange(n)
        worst = 0.0
        for i in entries:
            orig = flat[i]
            flat[i] = orig + DEFAULT_STEP
            fp = float(loss_fn().data)
            flat[i] = orig - DEFAULT_STEP
            fm = float(loss_fn().data)
            flat[i] = orig
            fd = (fp - fm) / (2 * DEFAULT_STEP)
            analytic = float(gflat[i])
            if corrupt:
                analytic += 1.0
                corrupt = False  # falsify exactly one entry
            worst = max(worst, rel_err(fd, analytic))
        group = name.split(".", 1)[0]
        results[group] = max(results.get(group, 0.0), worst)
        if progress is not None:
            progress(name, worst)
    return results
