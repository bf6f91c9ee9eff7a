"""Minimal dense tensor engine with reverse-mode automatic differentiation.

Tensors wrap contiguous numpy buffers (float32 or float64). Every
differentiable operation records a node holding its input tensors and a
backward rule; calling :func:`backward` on a scalar loss walks the recorded
graph once per node in reverse topological order and accumulates gradients
into every reachable tensor with ``requires_grad`` set.

All reductions delegate to numpy, so the forward pass is bit-deterministic
for identical input buffers. Callers that need order-canonical results
(e.g. permutation-invariant aggregation) are expected to canonicalize the
row order of their inputs before summing; see ``fsnet.aggregate``.
"""

from __future__ import annotations

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class Node:
    """One recorded operation: input tensors plus a backward rule.

    ``backward`` maps the output gradient (ndarray) to a tuple of input
    gradients aligned with ``inputs``; ``None`` entries mean "no gradient
    flows to this input".
    """

    __slots__ = ("inputs", "backward")

    def __init__(self, inputs, backward):
        self.inputs = inputs
        self.backward = backward


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        # ascontiguousarray promotes 0-d to 1-d; keep scalars 0-d
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # operator sugar; rhs may be a python scalar
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_same_dtype(a, b):
    if a.dtype != b.dtype:
        raise ValueError(f"dtype mismatch: {a.dtype} vs {b.dtype}")


def _result(data, inputs, backward_rule):
    out = Tensor(data)
    if any(t.requires_grad or t.node is not None for t in inputs):
        out.node = Node(tuple(inputs), backward_rule)
    return out


def _unbroadcast(grad, shape):
    """Sum out broadcast axes so grad matches the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise suite


def add(a, b):
    _check_same_dtype(a, b)

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b):
    _check_same_dtype(a, b)

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b):
    _check_same_dtype(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), bw)


def relu(x):
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0), (x,), bw)


def leaky_relu(x, slope=0.2):
    mask = x.data >= 0
    scale = np.where(mask, 1.0, slope).astype(x.dtype)

    def bw(g):
        return (g * scale,)

    return _result(x.data * scale, (x,), bw)


def reshape(x, shape):
    old = x.data.shape

    def bw(g):
        return (g.reshape(old),)

    return _result(x.data.reshape(shape), (x,), bw)


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.data.ndim)))
    inv = np.argsort(axes)

    def bw(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _result(np.ascontiguousarray(x.data.transpose(axes)), (x,), bw)


def concat(tensors, axis=0):
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    for t in tensors[1:]:
        _check_same_dtype(tensors[0], t)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def gather_rows(x, indices):
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError("gather_rows expects a 1-D index list")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise IndexError(f"gather_rows index out of range for {x.data.shape[0]} rows")
    shape = x.data.shape

    def bw(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, idx, g)
        return (gx,)

    return _result(x.data[idx], (x,), bw)


def repeat_axis(x, r, axis=0):
    """Repeat every slice along ``axis`` r times consecutively."""
    if r < 1:
        raise ValueError("repeat count must be >= 1")
    shape = x.data.shape

    def bw(g):
        gs = g.reshape(shape[:axis] + (shape[axis], r) + shape[axis + 1:])
        return (gs.sum(axis=axis + 1),)

    return _result(np.repeat(x.data, r, axis=axis), (x,), bw)


def reduce_sum(x, axis=None):
    shape = x.data.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).astype(g.dtype, copy=True),)

    return _result(x.data.sum(axis=axis), (x,), bw)


def reduce_mean(x, axis=None):
    shape = x.data.shape
    n = x.data.size if axis is None else shape[axis]

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g / n, shape).astype(g.dtype, copy=True),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).astype(g.dtype, copy=True),)

    return _result(x.data.mean(axis=axis), (x,), bw)


def reduce_max(x, axis):
    """Max along one axis; backward routes the gradient to the first
    (lowest-index) argmax element of each slice."""
    idx = np.argmax(x.data, axis=axis)
    shape = x.data.shape

    def bw(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _result(np.max(x.data, axis=axis), (x,), bw)


# ---------------------------------------------------------------------------
# matmul / softmax / conv2d


def matmul(a, b):
    _check_same_dtype(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D tensors")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"matmul inner extents disagree: {a.data.shape} x {b.data.shape}"
        )
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, (a, b), bw)


def softmax(x, axis=-1):
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _result(y, (x,), bw)


def _conv_out_extent(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def _im2col(x, kh, kw, stride, padding, out_h, out_w):
    c = x.shape[0]
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((c, kh, kw, out_h, out_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = x[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride]
    return cols.reshape(c * kh * kw, out_h * out_w)


def _col2im(cols, c, h, w, kh, kw, stride, padding, out_h, out_w):
    xp = np.zeros((c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    cols = cols.reshape(c, kh, kw, out_h, out_w)
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += cols[:, i, j]
    if padding:
        return xp[:, padding:-padding, padding:-padding]
    return xp


def conv2d(x, w, stride=1, padding=0):
    """Cross-correlation of a C_in x H x W input with a C_out x C_in x Kh x Kw
    kernel, zero padding."""
    _check_same_dtype(x, w)
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ValueError("conv2d expects CHW input and OIKK kernel")
    c_in, h, wd = x.data.shape
    c_out, c_in_w, kh, kw = w.data.shape
    if c_in != c_in_w:
        raise ValueError(f"conv2d channel mismatch: input {c_in}, kernel {c_in_w}")
    out_h = _conv_out_extent(h, kh, stride, padding)
    out_w = _conv_out_extent(wd, kw, stride, padding)
    if out_h < 1 or out_w < 1:
        raise ValueError(
            f"conv2d output extent non-positive for input {h}x{wd}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )
    cols = _im2col(x.data, kh, kw, stride, padding, out_h, out_w)
    wmat = w.data.reshape(c_out, c_in * kh * kw)
    out = (wmat @ cols).reshape(c_out, out_h, out_w)

    def bw(g):
        gmat = g.reshape(c_out, out_h * out_w)
        gw = (gmat @ cols.T).reshape(w.data.shape)
        gcols = wmat.T @ gmat
        gx = _col2im(gcols, c_in, h, wd, kh, kw, stride, padding, out_h, out_w)
        return gx, gw

    return _result(out, (x, w), bw)


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in visited or t.node is None:
            continue
        visited.add(id(t))
        stack.append((t, True))
        for inp in t.node.inputs:
            if id(inp) not in visited and inp.node is not None:
                stack.append((inp, False))
    return order


def backward(loss):
    """Accumulate gradients of a scalar loss into every reachable tensor
    with requires_grad set. Each recorded node is visited exactly once, in
    reverse topological order."""
    if loss.data.shape != ():
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    seed = np.ones((), dtype=loss.dtype)
    if loss.node is None:
        if loss.requires_grad:
            loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    grads = {id(loss): seed}
    for t in reversed(_toposort(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            t.grad = g.copy() if t.grad is None else t.grad + g
        for inp, ig in zip(t.node.inputs, t.node.backward(g)):
            if ig is None:
                continue
            if inp.node is None:
                # leaf: accumulate straight into .grad
                if inp.requires_grad:
                    inp.grad = ig.copy() if inp.grad is None else inp.grad + ig
                continue
            key = id(inp)
            grads[key] = grads[key] + ig if key in grads else ig
