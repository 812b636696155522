"""Shared test utilities, including the independent brute-force comparator
the production oracle is checked against."""

from __future__ import annotations

import math
from typing import Any

import numpy as np

from feedfuzz.oracle import TensorValue, ToleranceConfig


def brute_force_consistent(
    a: TensorValue, b: TensorValue, tol: ToleranceConfig
) -> tuple[bool, int | None]:
    """Pure-Python index loop over the stated oracle rule.

    Deliberately independent of the numpy implementation: plain floats, one
    element at a time, first violating flat index reported.
    """
    if list(a.shape) != list(b.shape) or a.dtype != b.dtype:
        return False, None
    for i, (x, y) in enumerate(zip(a.data.tolist(), b.data.tolist())):
        if math.isnan(x) and math.isnan(y):
            ok = tol.equal_nan
        elif math.isnan(x) or math.isnan(y):
            ok = False
        elif math.isinf(x) or math.isinf(y):
            ok = x == y
        else:
            ok = abs(x - y) <= tol.atol + tol.rtol * abs(y)
        if not ok:
            return False, i
    return True, None


def tensor(values: Any, shape: list[int] | None = None, dtype: str = "f64") -> TensorValue:
    arr = np.asarray(values, dtype=np.float64)
    if shape is None:
        shape = list(arr.shape)
    return TensorValue(shape=shape, dtype=dtype, data=arr.reshape(-1))


def random_tensor_pair(rng: np.random.Generator, inject_specials: bool = True):
    """A pair of same-shape tensors with mostly-close values plus NaN/Inf salt."""
    ndim = int(rng.integers(0, 5))
    shape = [int(rng.integers(1, 9)) for _ in range(ndim)]
    n = int(np.prod(shape)) if shape else 1
    base = rng.normal(0.0, 10.0, size=n)
    noise = rng.normal(0.0, 0.002, size=n) * rng.integers(0, 2, size=n)
    other = base + noise
    if inject_specials and n > 0:
        for values in (base, other):
            k = int(rng.integers(0, max(1, n // 4) + 1))
            idx = rng.integers(0, n, size=k)
            special = rng.choice([np.nan, np.inf, -np.inf], size=k)
            values[idx] = special
    a = TensorValue(shape=list(shape), dtype="f64", data=base)
    b = TensorValue(shape=list(shape), dtype="f64", data=other)
    return a, b
