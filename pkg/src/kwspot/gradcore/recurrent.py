"""LSTM primitives: a single cell step and a fused full-sequence pass.

Gate order is (input, forget, candidate, output). The fused sequence op
records one tape entry and backpropagates through time exactly; the
single-step variant is built from elementary primitives and serves as the
reference the fused op is checked against.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor, record_op
from . import ops


def lstm_step(x: Tensor, h: Tensor, c: Tensor,
              wx: Tensor, wh: Tensor, b: Tensor):
    """One LSTM cell update; returns (h', c')."""
    d = x.data.shape[0]
    hidden = h.data.shape[0]
    if wx.data.shape != (d, 4 * hidden) or wh.data.shape != (hidden, 4 * hidden):
        raise DimensionError(
            f"lstm weights {wx.data.shape}/{wh.data.shape} do not match "
            f"input {d} and hidden {hidden}")
    if c.data.shape != (hidden,):
        raise DimensionError(
            f"lstm state shapes differ: h {h.data.shape} vs c {c.data.shape}")
    z = ops.add(ops.add(
        ops.reshape(ops.matmul(ops.reshape(x, (1, d)), wx), (4 * hidden,)),
        ops.reshape(ops.matmul(ops.reshape(h, (1, hidden)), wh), (4 * hidden,))),
        b)
    i = ops.sigmoid(ops.getitem(z, slice(0, hidden)))
    f = ops.sigmoid(ops.getitem(z, slice(hidden, 2 * hidden)))
    g = ops.tanh(ops.getitem(z, slice(2 * hidden, 3 * hidden)))
    o = ops.sigmoid(ops.getitem(z, slice(3 * hidden, 4 * hidden)))
    c_new = ops.add(ops.mul(f, c), ops.mul(i, g))
    h_new = ops.mul(o, ops.tanh(c_new))
    return h_new, c_new


def _sigm(z):
    e = np.exp(-np.abs(z))
    p = 1.0 / (1.0 + e)
    return np.where(z >= 0, p, 1.0 - p)


def lstm_seq(x: Tensor, wx: Tensor, wh: Tensor, b: Tensor,
             reverse: bool = False) -> Tensor:
    """Full-sequence LSTM from zero initial state; returns hidden states (T, H).

    One fused tape record; the backward pass is exact BPTT. With
    ``reverse=True`` the recurrence runs from the last frame to the first
    (output rows stay aligned with input rows).
    """
    t_len, d = x.data.shape
    hidden = wh.data.shape[0]
    if wx.data.shape != (d, 4 * hidden):
        raise DimensionError(
            f"lstm_seq wx {wx.data.shape} does not match input width {d}")

    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    gx = x.data @ wx.data  # (T, 4H), hoisted out of the recurrence

    hs = np.zeros((t_len, hidden))
    i_all = np.zeros((t_len, hidden))
    f_all = np.zeros((t_len, hidden))
    g_all = np.zeros((t_len, hidden))
    o_all = np.zeros((t_len, hidden))
    tc_all = np.zeros((t_len, hidden))
    cprev_all = np.zeros((t_len, hidden))
    hprev_all = np.zeros((t_len, hidden))

    h = np.zeros(hidden)
    c = np.zeros(hidden)
    for t in order:
        z = gx[t] + h @ wh.data + b.data
        sif = _sigm(z[:2 * hidden])
        i, f = sif[:hidden], sif[hidden:]
        g = np.tanh(z[2 * hidden:3 * hidden])
        o = _sigm(z[3 * hidden:])
        cprev_all[t] = c
        hprev_all[t] = h
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        i_all[t], f_all[t], g_all[t], o_all[t], tc_all[t] = i, f, g, o, tc
        hs[t] = h

    def backward(g_hs):
        dz_all = np.zeros((t_len, 4 * hidden))
        dh_next = np.zeros(hidden)
        dc_next = np.zeros(hidden)
        back_order = order if reverse else range(t_len - 1, -1, -1)
        for t in back_order:
            dh = g_hs[t] + dh_next
            do = dh * tc_all[t]
            dc = dc_next + dh * o_all[t] * (1.0 - tc_all[t] ** 2)
            di = dc * g_all[t]
            dg = dc * i_all[t]
            df = dc * cprev_all[t]
            dc_next = dc * f_all[t]
            dz = dz_all[t]
            dz[:hidden] = di * i_all[t] * (1.0 - i_all[t])
            dz[hidden:2 * hidden] = df * f_all[t] * (1.0 - f_all[t])
            dz[2 * hidden:3 * hidden] = dg * (1.0 - g_all[t] ** 2)
            dz[3 * hidden:] = do * o_all[t] * (1.0 - o_all[t])
            dh_next = dz @ wh.data.T
        gx_in = dz_all @ wx.data.T
        gwx = x.data.T @ dz_all
        gwh = hprev_all.T @ dz_all
        gb = dz_all.sum(axis=0)
        return gx_in, gwx, gwh, gb

    return record_op((x, wx, wh, b), hs, backward)
