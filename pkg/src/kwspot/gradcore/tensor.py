"""Dense double-precision tensors and the reverse-mode tape.

The engine is deliberately small: tensors wrap a float64 ndarray, and every
differentiable primitive appends one record to the ambient :class:`Tape`.
Recording only happens while a tape is active, so evaluation code that runs
outside a ``with Tape():`` block pays no autodiff overhead.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import DimensionError

__all__ = ["Tensor", "Tape", "active_tape", "as_tensor"]

_ACTIVE_TAPE: Optional["Tape"] = None


class Tensor:
    """A dense row-major float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar is provided by the ops module (registered below) so
    # that tensor.py stays free of forward/backward formulas.
    def __add__(self, other):
        return _OPS["add"](self, as_tensor(other))

    def __radd__(self, other):
        return _OPS["add"](as_tensor(other), self)

    def __sub__(self, other):
        return _OPS["sub"](self, as_tensor(other))

    def __rsub__(self, other):
        return _OPS["sub"](as_tensor(other), self)

    def __mul__(self, other):
        return _OPS["mul"](self, as_tensor(other))

    def __rmul__(self, other):
        return _OPS["mul"](as_tensor(other), self)

    def __neg__(self):
        return _OPS["mul"](self, as_tensor(-1.0))

    def __matmul__(self, other):
        return _OPS["matmul"](self, other)


_OPS: dict = {}


def _register_op(name: str, fn: Callable):
    _OPS[name] = fn


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


class _Record:
    """One primitive application: inputs, output, and its adjoint rule."""

    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitive applications for one backward pass.

    Records are appended in execution (topological) order; ``backward``
    walks them exactly once in reverse, accumulating gradients additively
    across fan-out.
    """

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, inputs: Sequence[Tensor], output: Tensor,
               backward_fn: Callable[[np.ndarray], Iterable]):
        """Append one primitive application.

        ``backward_fn`` maps the output adjoint to one adjoint per input
        (``None`` for inputs that do not need gradients).
        """
        self._records.append(_Record(tuple(inputs), output, backward_fn))

    def backward(self, loss: Tensor, seed_grad: Optional[np.ndarray] = None):
        """Single reverse sweep accumulating gradients into ``.grad``."""
        if seed_grad is None:
            if loss.data.ndim != 0:
                raise DimensionError(
                    f"backward() needs a scalar loss, got shape {loss.data.shape}")
            seed_grad = np.ones_like(loss.data)
        loss.accumulate_grad(seed_grad)
        for rec in reversed(self._records):
            out_grad = rec.output.grad
            if out_grad is None:
                continue
            grads = rec.backward_fn(out_grad)
            for tensor, grad in zip(rec.inputs, grads):
                if grad is None or not tensor.requires_grad:
                    continue
                tensor.accumulate_grad(grad)


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE


def record_op(inputs: Sequence[Tensor], out_data: np.ndarray,
              backward_fn: Callable) -> Tensor:
    """Wrap ``out_data`` in a Tensor, recording on the active tape if needed."""
    tape = _ACTIVE_TAPE
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs_grad)
    if needs_grad:
        tape.record(inputs, out, backward_fn)
    return out
