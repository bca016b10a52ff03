"""Central-finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, Tape


def gradcheck(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
              coords: Optional[Sequence[tuple]] = None) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    ``f`` must map ``x`` to a scalar Tensor. ``coords`` restricts the
    finite-difference probe to a subset of coordinates (multi-indices);
    by default every coordinate is checked. The relative error at each
    coordinate is |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
    """
    was = x.requires_grad
    x.requires_grad = True
    x.grad = None
    with Tape() as tape:
        y = f(x)
        tape.backward(y)
    g_ad = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None
    x.requires_grad = was

    if coords is None:
        coords = list(np.ndindex(*x.data.shape)) if x.data.ndim else [()]

    worst = 0.0
    for idx in coords:
        orig = x.data[idx]
        x.data[idx] = orig + h
        f_plus = float(f(x).data)
        x.data[idx] = orig - h
        f_minus = float(f(x).data)
        x.data[idx] = orig
        g_fd = (f_plus - f_minus) / (2.0 * h)
        ga = float(g_ad[idx])
        err = abs(ga - g_fd) / max(1e-8, abs(ga) + abs(g_fd))
        worst = max(worst, err)
    return worst
