"""Parameterized layers built on the primitives.

Every layer registers its tensors into a ParamStore under a dotted name
prefix; checkpoint files use those names directly. Initialization is
uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) for weights, zero for biases,
with the LSTM forget-gate bias raised to +1.
"""

from __future__ import annotations

import numpy as np

from .optim import ParamStore
from .tensor import Tensor
from . import ops, recurrent


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, store: ParamStore, prefix: str, d_in: int, d_out: int,
                 rng: np.random.Generator, bias: bool = True):
        self.w = store.param(f"{prefix}.w", fan_in_uniform(rng, (d_in, d_out), d_in))
        self.b = store.param(f"{prefix}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ops.matmul(x, self.w)
        if self.b is not None:
            out = ops.add(out, self.b)
        return out


class Conv2d:
    """Channels-last 5x5/1x1-style conv, "same" padding, no bias (BN follows)."""

    def __init__(self, store: ParamStore, prefix: str, kernel, c_in: int,
                 c_out: int, stride, rng: np.random.Generator,
                 bias: bool = False):
        kt, kp = kernel
        fan_in = kt * kp * c_in
        self.w = store.param(f"{prefix}.w",
                             fan_in_uniform(rng, (kt, kp, c_in, c_out), fan_in))
        self.b = store.param(f"{prefix}.b", np.zeros(c_out)) if bias else None
        self.stride = tuple(stride)

    def __call__(self, x: Tensor) -> Tensor:
        out = ops.conv2d(x, self.w, self.stride)
        if self.b is not None:
            out = ops.add(out, self.b)
        return out


class Conv3d:
    def __init__(self, store: ParamStore, prefix: str, kernel, c_in: int,
                 c_out: int, stride, rng: np.random.Generator):
        kt, kh, kw = kernel
        fan_in = kt * kh * kw * c_in
        self.w = store.param(f"{prefix}.w",
                             fan_in_uniform(rng, (kt, kh, kw, c_in, c_out), fan_in))
        self.stride = tuple(stride)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv3d(x, self.w, self.stride)


class BatchNorm:
    def __init__(self, store: ParamStore, prefix: str, channels: int):
        self.gamma = store.param(f"{prefix}.gamma", np.ones(channels))
        self.beta = store.param(f"{prefix}.beta", np.zeros(channels))
        self.running_mean = store.buffer(f"{prefix}.running_mean",
                                         np.zeros(channels))
        self.running_var = store.buffer(f"{prefix}.running_var",
                                        np.ones(channels))

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return ops.batchnorm(x, self.gamma, self.beta,
                             self.running_mean, self.running_var, train)


class LSTM:
    """Unidirectional LSTM over (T, d_in); zero initial state."""

    def __init__(self, store: ParamStore, prefix: str, d_in: int, hidden: int,
                 rng: np.random.Generator, reverse: bool = False):
        self.wx = store.param(f"{prefix}.wx",
                              fan_in_uniform(rng, (d_in, 4 * hidden), d_in))
        self.wh = store.param(f"{prefix}.wh",
                              fan_in_uniform(rng, (hidden, 4 * hidden), hidden))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget-gate bias
        self.b = store.param(f"{prefix}.b", b)
        self.hidden = hidden
        self.reverse = reverse

    def __call__(self, x: Tensor) -> Tensor:
        return recurrent.lstm_seq(x, self.wx, self.wh, self.b,
                                  reverse=self.reverse)


class BiLSTM:
    """Forward + independent backward LSTM, hidden states concatenated."""

    def __init__(self, store: ParamStore, prefix: str, d_in: int,
                 hidden_per_dir: int, rng: np.random.Generator):
        self.fwd = LSTM(store, f"{prefix}.fwd", d_in, hidden_per_dir, rng)
        self.bwd = LSTM(store, f"{prefix}.bwd", d_in, hidden_per_dir, rng,
                        reverse=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.concat([self.fwd(x), self.bwd(x)], axis=1)


class Embedding:
    def __init__(self, store: ParamStore, prefix: str, vocab: int, d: int,
                 rng: np.random.Generator):
        self.table = store.param(f"{prefix}.table",
                                 fan_in_uniform(rng, (vocab, d), d))

    def __call__(self, ids: np.ndarray) -> Tensor:
        return ops.embedding(self.table, ids)
