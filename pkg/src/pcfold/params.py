"""Parameter containers and initialization helpers.

Module parameters live in nested dataclasses whose leaves are Tensors;
``named_tensors`` flattens any such structure into (dotted name, Tensor)
pairs with a stable order, which is what the optimizer, the checkpoint
writer, and the gradient checker consume.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .tensor import Tensor


def gaussian(rng, shape, std, dtype):
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def fanin_uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def named_tensors(obj, prefix=""):
    """Yield (dotted-name, Tensor) pairs from nested dataclasses, lists,
    tuples and dicts. Order is deterministic: field order for dataclasses,
    index order for sequences, insertion order for dicts."""
    if isinstance(obj, Tensor):
        yield prefix or "param", obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            val = getattr(obj, f.name)
            if val is None or isinstance(val, (int, float, str, bool, np.ndarray)):
                continue
            sub = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_tensors(val, sub)
    elif isinstance(obj, (list, tuple)):
        for i, val in enumerate(obj):
            sub = f"{prefix}.{i}" if prefix else str(i)
            yield from named_tensors(val, sub)
    elif isinstance(obj, dict):
        for key, val in obj.items():
            sub = f"{prefix}.{key}" if prefix else str(key)
            yield from named_tensors(val, sub)


def flat_tensors(obj):
    return dict(named_tensors(obj))


def zero_grads(obj):
    for _, t in named_tensors(obj):
        t.grad = None


def cast_params(obj, dtype):
    """In-place dtype conversion of every parameter tensor."""
    for _, t in named_tensors(obj):
        t.data = t.data.astype(dtype)
        t.grad = None
    return obj
