"""Named parameter storage and the Adam update."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, NumericError
from .tensor import Tensor


class ParamStore:
    """Named parameters plus per-parameter Adam state and non-trained buffers.

    Buffers (batch-norm running statistics) are saved with checkpoints but
    never touched by the optimizer.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.adam_t: dict[str, int] = {}

    def param(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params or name in self.buffers:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        self.adam_m[name] = np.zeros_like(t.data)
        self.adam_v[name] = np.zeros_like(t.data)
        self.adam_t[name] = 0
        return t

    def buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        arr = np.asarray(data, dtype=np.float64)
        self.buffers[name] = arr
        return arr

    def grads(self) -> dict[str, np.ndarray]:
        return {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for name, t in self.params.items()}

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def reset_adam(self):
        """Fresh optimizer state (used between curriculum stages)."""
        for name in self.params:
            self.adam_m[name][:] = 0.0
            self.adam_v[name][:] = 0.0
            self.adam_t[name] = 0

    def n_params(self) -> int:
        return sum(t.data.size for t in self.params.values())


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Standard Adam with bias correction; rejects non-finite gradients.

    The whole update is validated before any state is touched, so a bad
    gradient leaves parameters and moments unchanged.
    """
    for name, g in grads.items():
        if name not in store.params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != store.params[name].data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} of shape {store.params[name].data.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")

    for name, g in grads.items():
        m = store.adam_m[name]
        v = store.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        store.adam_t[name] += 1
        t = store.adam_t[name]
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        store.params[name].data -= lr * mhat / (np.sqrt(vhat) + eps)
