"""Minimal reverse-mode differentiation engine (double precision, CPU)."""

from .tensor import Tensor, Tape, active_tape, as_tensor
from .ops import (
    add, sub, mul, matmul, relu, sigmoid, tanh, exp, log,
    reshape, transpose, concat, getitem, embedding, expand_time,
    reduce_sum, reduce_mean, subset_max, stack_mean,
    conv, conv2d, conv3d, pool, pool2d, pool3d, batchnorm, sigmoid_bce,
    BN_EPS,
)
from .recurrent import lstm_step, lstm_seq
from .optim import ParamStore, adam_step
from .gradcheck import gradcheck
from .container import read_tensors, write_tensors, MAGIC
from .layers import (
    fan_in_uniform, Linear, Conv2d, Conv3d, BatchNorm, LSTM, BiLSTM, Embedding,
)
