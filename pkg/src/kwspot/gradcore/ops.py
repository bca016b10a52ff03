"""Differentiable primitives: elementwise math, matmul, conv, pool, batchnorm.

Convolutions are cross-correlations with "same" zero padding, so a unit
stride preserves spatial extents and a stride ``s`` yields ``ceil(in/s)``
outputs. Pooling uses no left padding; right-edge windows may be partial
and use only valid cells. Max backward routes the gradient to the first
cell (in kernel scan order) attaining the maximum.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from ..errors import DimensionError, NumericError
from .tensor import Tensor, as_tensor, record_op, _register_op

__all__ = [
    "add", "sub", "mul", "matmul", "relu", "sigmoid", "tanh", "exp", "log",
    "reshape", "transpose", "concat", "getitem", "embedding", "expand_time",
    "reduce_sum", "reduce_mean", "subset_max", "stack_mean",
    "conv", "conv2d", "conv3d", "pool", "pool2d", "pool3d",
    "batchnorm", "sigmoid_bce",
]


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and shape ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record_op((a, b), out, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record_op((a, b), out, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return record_op((a, b), out, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul shapes incompatible: {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return record_op((a, b), out, backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward(g):
        return (g * (x.data > 0.0),)

    return record_op((x,), out, backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # branchless stable form: exp(-|z|) never overflows
    e = np.exp(-np.abs(z))
    p = 1.0 / (1.0 + e)
    return np.where(z >= 0, p, 1.0 - p)


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def backward(g):
        return (g * s * (1.0 - s),)

    return record_op((x,), s, backward)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - t * t),)

    return record_op((x,), t, backward)


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)

    def backward(g):
        return (g * e,)

    return record_op((x,), e, backward)


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)

    def backward(g):
        return (g / x.data,)

    return record_op((x,), out, backward)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.data.shape),)

    return record_op((x,), out, backward)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return record_op((x,), out, backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    splits = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return record_op(tuple(tensors), out, backward)


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return record_op((x,), out, backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise DimensionError(
            f"embedding ids out of range for table of {table.data.shape[0]} rows")
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return record_op((table,), out, backward)


def expand_time(rows: Tensor, t: int) -> Tensor:
    """Broadcast an (n, d) matrix to (t, n, d); backward sums over time."""
    out = np.broadcast_to(rows.data, (t,) + rows.data.shape).copy()

    def backward(g):
        return (g.sum(axis=0),)

    return record_op((rows,), out, backward)


def reduce_sum(x: Tensor, axis=None) -> Tensor:
    out = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy(),)

    return record_op((x,), out, backward)


def reduce_mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.data.shape[axis]
    out = x.data.mean(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / n, x.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, x.data.shape).copy(),)

    return record_op((x,), out, backward)


def subset_max(x: Tensor, indices: np.ndarray) -> Tensor:
    """Max over ``x[indices]`` (1-D x). Backward routes to the first argmax."""
    indices = np.asarray(indices, dtype=np.int64)
    if x.data.ndim != 1:
        raise DimensionError(f"subset_max expects a vector, got {x.data.shape}")
    if indices.size == 0:
        raise DimensionError("subset_max needs a non-empty index set")
    vals = x.data[indices]
    k = int(np.argmax(vals))
    winner = int(indices[k])
    out = np.asarray(x.data[winner])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[winner] = g
        return (gx,)

    return record_op((x,), out, backward)


def stack_mean(tensors: Sequence[Tensor]) -> Tensor:
    """Mean of scalar tensors (used to reduce per-pair losses)."""
    n = len(tensors)
    out = np.asarray(sum(t.data for t in tensors) / n)

    def backward(g):
        return tuple(g / n for _ in tensors)

    return record_op(tuple(tensors), out, backward)


# ---------------------------------------------------------------------------
# convolution (n spatial axes, channels last)
# ---------------------------------------------------------------------------

def _same_pads(extents, kernel, strides):
    pads = []
    for d, k, s in zip(extents, kernel, strides):
        out = -(-d // s)
        total = max((out - 1) * s + k - d, 0)
        pads.append((total // 2, total - total // 2))
    return pads


def conv(x: Tensor, w: Tensor, stride) -> Tensor:
    """Cross-correlation with "same" zero padding, channels last.

    ``x`` has n spatial axes plus channels; ``w`` is (K_1..K_n, C_in, C_out).
    """
    nsp = w.data.ndim - 2
    if x.data.ndim != nsp + 1:
        raise DimensionError(
            f"conv input rank {x.data.ndim} does not match kernel {w.data.shape}")
    if x.data.shape[-1] != w.data.shape[-2]:
        raise DimensionError(
            f"conv channel mismatch: input {x.data.shape} vs kernel {w.data.shape}")
    kernel = w.data.shape[:nsp]
    if any(k % 2 == 0 for k in kernel):
        raise DimensionError(f"conv kernel extents must be odd, got {kernel}")
    stride = tuple(int(s) for s in stride)
    if any(s < 1 for s in stride):
        raise DimensionError(f"conv strides must be >= 1, got {stride}")

    extents = x.data.shape[:nsp]
    cin, cout = w.data.shape[-2], w.data.shape[-1]
    pads = _same_pads(extents, kernel, stride)
    xp = np.pad(x.data, pads + [(0, 0)])
    out_ext = tuple(-(-d // s) for d, s in zip(extents, stride))

    # im2col via a strided window view, then one GEMM
    es = xp.strides
    view_shape = out_ext + kernel + (cin,)
    view_strides = tuple(es[i] * stride[i] for i in range(nsp)) + es
    cols = np.lib.stride_tricks.as_strided(xp, view_shape, view_strides)
    taps = int(np.prod(kernel)) * cin
    ncells = int(np.prod(out_ext))
    out = (cols.reshape(ncells, taps) @ w.data.reshape(taps, cout))
    out = out.reshape(out_ext + (cout,))

    def backward(g):
        g2 = g.reshape(ncells, cout)
        gw = (cols.reshape(ncells, taps).T @ g2).reshape(w.data.shape)
        gxp = np.zeros_like(xp)
        wt = w.data.reshape(taps, cout)
        gcols = (g2 @ wt.T).reshape(out_ext + kernel + (cin,))
        # scatter per kernel tap into strided slices of the padded input
        for tap in np.ndindex(*kernel):
            sl = tuple(
                slice(tap[i], tap[i] + stride[i] * out_ext[i], stride[i])
                for i in range(nsp))
            gxp[sl + (slice(None),)] += gcols[(Ellipsis,) + tap + (slice(None),)]
        unpad = tuple(slice(p[0], p[0] + extents[i]) for i, p in enumerate(pads))
        return gxp[unpad + (slice(None),)], gw

    return record_op((x, w), out, backward)


def conv2d(x: Tensor, w: Tensor, stride=(1, 1)) -> Tensor:
    if w.data.ndim != 4:
        raise DimensionError(f"conv2d kernel must be rank 4, got {w.data.shape}")
    return conv(x, w, stride)


def conv3d(x: Tensor, w: Tensor, stride=(1, 1, 1)) -> Tensor:
    if w.data.ndim != 5:
        raise DimensionError(f"conv3d kernel must be rank 5, got {w.data.shape}")
    return conv(x, w, stride)


# ---------------------------------------------------------------------------
# pooling (n spatial axes, channels last, partial right-edge windows)
# ---------------------------------------------------------------------------

def pool(x: Tensor, kind: str, kernel, stride) -> Tensor:
    if kind not in ("max", "avg"):
        raise ValueError(f"unknown pool kind {kind!r}")
    nsp = len(kernel)
    if x.data.ndim != nsp + 1:
        raise DimensionError(
            f"pool input rank {x.data.ndim} does not match kernel {kernel}")
    extents = x.data.shape[:nsp]
    kernel = tuple(int(k) for k in kernel)
    stride = tuple(int(s) for s in stride)
    for d, k in zip(extents, kernel):
        if k > d:
            raise DimensionError(
                f"pool kernel {kernel} exceeds input extents {extents}")
    out_ext = tuple(-(-d // s) for d, s in zip(extents, stride))
    cin = x.data.shape[-1]

    # pad to full windows; -inf (max) is never selected, 0 (avg) is corrected
    # by the per-window valid-cell count
    padded_ext = tuple((o - 1) * s + k
                       for o, s, k in zip(out_ext, stride, kernel))
    fill = -np.inf if kind == "max" else 0.0
    xp = np.pad(x.data, [(0, pe - d) for pe, d in zip(padded_ext, extents)]
                + [(0, 0)], constant_values=fill)
    es = xp.strides
    view_shape = out_ext + kernel + (cin,)
    view_strides = tuple(es[i] * stride[i] for i in range(nsp)) + es
    win = np.lib.stride_tricks.as_strided(xp, view_shape, view_strides)
    ncells = int(np.prod(out_ext))
    kflat = int(np.prod(kernel))
    flat = win.reshape(ncells, kflat, cin)

    if kind == "max":
        arg = flat.argmax(axis=1)  # first max in kernel scan order
        out = np.take_along_axis(flat, arg[:, None, :], axis=1)[:, 0, :]
        out = out.reshape(out_ext + (cin,))

        def backward(g):
            gx = np.zeros(padded_ext + (cin,))
            gflat = g.reshape(ncells, cin)
            # map (cell, tap) to absolute padded coordinates
            cell_idx = np.unravel_index(np.arange(ncells), out_ext)
            tap_idx = np.unravel_index(arg.ravel(),
                                       kernel)  # (nsp arrays of ncells*cin)
            abs_idx = []
            for i in range(nsp):
                base = cell_idx[i][:, None] * stride[i]
                abs_idx.append((base + np.array(tap_idx[i]).reshape(ncells, cin)).ravel())
            chan = np.tile(np.arange(cin), ncells)
            np.add.at(gx, tuple(abs_idx) + (chan,), gflat.ravel())
            unpad = tuple(slice(0, d) for d in extents)
            return (gx[unpad + (slice(None),)],)

        return record_op((x,), out, backward)

    # avg over valid cells only
    counts = np.ones((1,))
    for i in range(nsp):
        starts = np.arange(out_ext[i]) * stride[i]
        valid = np.minimum(starts + kernel[i], extents[i]) - starts
        counts = np.multiply.outer(counts, valid)
    counts = counts.reshape((1,) + out_ext)[0]  # drop seed axis
    out = flat.sum(axis=1).reshape(out_ext + (cin,)) / counts[..., None]

    def backward(g):
        gx = np.zeros(padded_ext + (cin,))
        gshare = g / counts[..., None]
        for tap in np.ndindex(*kernel):
            sl = tuple(slice(tap[i], tap[i] + stride[i] * out_ext[i], stride[i])
                       for i in range(nsp))
            gx[sl + (slice(None),)] += gshare
        unpad = tuple(slice(0, d) for d in extents)
        return (gx[unpad + (slice(None),)],)

    return record_op((x,), out, backward)


def pool2d(x: Tensor, kind: str, kernel, stride) -> Tensor:
    return pool(x, kind, kernel, stride)


def pool3d(x: Tensor, kind: str, kernel, stride) -> Tensor:
    return pool(x, kind, kernel, stride)


# ---------------------------------------------------------------------------
# batch normalization (channels last, eps = 1e-5)
# ---------------------------------------------------------------------------

BN_EPS = 1e-5


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor,
              running_mean: np.ndarray, running_var: np.ndarray,
              train: bool, momentum: float = 0.1) -> Tensor:
    """Normalize per channel over all leading axes.

    Train mode uses batch moments and updates the running statistics in
    place by exponential moving average; eval mode uses the running stats.
    """
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError(
            f"batchnorm scale/shift must be ({c},), got {gamma.data.shape}")
    axes = tuple(range(x.data.ndim - 1))
    n = int(np.prod([x.data.shape[a] for a in axes])) if axes else 1

    if train:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu
        running_var *= (1.0 - momentum)
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var

    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        if not train:
            return g * gamma.data * inv_std, dgamma, dbeta
        dxhat = g * gamma.data
        dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=axes)
                              - xhat * (dxhat * xhat).sum(axis=axes))
        return dx, dgamma, dbeta

    return record_op((x, gamma, beta), out, backward)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def sigmoid_bce(logit: Tensor, y: int) -> Tensor:
    """Stable binary cross-entropy from the logit: -[y log s + (1-y) log(1-s)]."""
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y!r}")
    l = logit.data
    out = np.maximum(l, 0.0) - l * y + np.log1p(np.exp(-np.abs(l)))

    def backward(g):
        return (g * (_sigmoid(l) - y),)

    return record_op((logit,), out, backward)


# arithmetic sugar on Tensor
_register_op("add", add)
_register_op("sub", sub)
_register_op("mul", mul)
_register_op("matmul", matmul)
