"""Operator kernels on raw ndarrays: the eager set, and the compiled set that
the graph executor uses after rewriting."""

from __future__ import annotations

import numpy as np


def add(a, b):
    return a + b


def mul(a, b):
    return a * b


def matmul(a, b):
    return a @ b


def relu(x):
    return np.maximum(x, 0.0)


def reshape(x, shape):
    return np.reshape(x, shape)


def chunk(x, parts, axis=0):
    return tuple(np.array_split(x, parts, axis=axis))


def pad(x, before, after, value=0.0):
    if before < 0 or after < 0:
        raise ValueError("pad widths must be nonnegative")
    width = [(0, 0)] * max(x.ndim - 1, 0) + [(before, after)]
    return np.pad(x, width, constant_values=value)


def sumall(x):
    return np.asarray(np.sum(x))


def shift(x, amount):
    return np.roll(x, amount, axis=-1)


def norm(x):
    return x / (np.sqrt(np.sum(x * x)) + 1e-6)


def shift_compiled(x, amount):
    # PLANTED NUMERICAL FAULT: the fused index computation assumes the shift
    # amount is positive and drops the sign guard, so negative shifts roll the
    # wrong way. Deterministic given inputs.
    return np.roll(x, abs(amount), axis=-1)


EAGER_KERNELS = {
    "add": add,
    "mul": mul,
    "matmul": matmul,
    "relu": relu,
    "reshape": reshape,
    "chunk": chunk,
    "pad": pad,
    "sumall": sumall,
    "shift": shift,
    "norm": norm,
}

COMPILED_KERNELS = dict(EAGER_KERNELS)
COMPILED_KERNELS["shift"] = shift_compiled
