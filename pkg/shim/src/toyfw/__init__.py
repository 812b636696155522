"""A miniature array framework used as a hermetic system under test.

It has an eager interpreter and a "compiled" path that traces the model,
applies naive rewrites, and re-executes the graph. Two faults are planted in
the compiled path on purpose (see toyfw.compiler and toyfw.ops): a numerical
one on `shift` and a behavioral one on `pad`. Everything else agrees bitwise
between the two paths.
"""

from __future__ import annotations

import numpy as np

from . import ops as _kernels


class Tensor:
    """A dense float64 array plus the trace reference used by the compiler."""

    def __init__(self, array):
        self.array = np.asarray(array, dtype=np.float64)
        self.ref = None  # (node_id, slot) while tracing

    @property
    def shape(self):
        return self.array.shape

    def __repr__(self):
        return f"Tensor(shape={self.array.shape})"


class Module:
    """Base class for model definitions; subclasses implement forward()."""

    def __call__(self, *inputs):
        return self.forward(*inputs)

    def forward(self, *inputs):
        raise NotImplementedError


def tensor(values) -> Tensor:
    return Tensor(values)


def randn(rng: np.random.Generator, shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _apply(op: str, tensors: tuple, params: dict, n_out: int = 1):
    from . import compiler

    arrays = [t.array for t in tensors]
    result = _kernels.EAGER_KERNELS[op](*arrays, **params)
    outs = tuple(Tensor(r) for r in result) if n_out != 1 else (Tensor(result),)
    ctx = compiler.active_trace()
    if ctx is not None:
        refs = [ctx.ref_of(t) for t in tensors]
        node_id = ctx.record(op, refs, params, n_out=len(outs))
        for slot, out in enumerate(outs):
            out.ref = (node_id, slot)
    return outs[0] if n_out == 1 else outs


def add(a: Tensor, b: Tensor) -> Tensor:
    return _apply("add", (a, b), {})


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _apply("mul", (a, b), {})


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return _apply("matmul", (a, b), {})


def relu(x: Tensor) -> Tensor:
    return _apply("relu", (x,), {})


def reshape(x: Tensor, shape) -> Tensor:
    return _apply("reshape", (x,), {"shape": tuple(int(s) for s in shape)})


def chunk(x: Tensor, parts: int, axis: int = 0):
    return _apply("chunk", (x,), {"parts": int(parts), "axis": int(axis)}, n_out=int(parts))


def pad(x: Tensor, before: int, after: int, value: float = 0.0) -> Tensor:
    return _apply("pad", (x,), {"before": int(before), "after": int(after), "value": float(value)})


def sumall(x: Tensor) -> Tensor:
    return _apply("sumall", (x,), {})


def shift(x: Tensor, amount: int) -> Tensor:
    return _apply("shift", (x,), {"amount": int(amount)})


def norm(x: Tensor) -> Tensor:
    return _apply("norm", (x,), {})


from .compiler import ToyCompileError, compile  # noqa: E402,A004  (public API)

__all__ = [
    "Module",
    "Tensor",
    "ToyCompileError",
    "add",
    "chunk",
    "compile",
    "matmul",
    "mul",
    "norm",
    "pad",
    "randn",
    "relu",
    "reshape",
    "shift",
    "sumall",
    "tensor",
]
