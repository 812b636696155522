from __future__ import annotations

import numpy as np
import pytest

import toyfw


def run_both(model, *inputs):
    eager = model(*inputs)
    eager_list = list(eager) if isinstance(eager, (tuple, list)) else [eager]
    compiled = toyfw.compile(model)(*inputs)
    return eager_list, compiled


class FaultFree(toyfw.Module):
    def forward(self, x, w):
        a = toyfw.relu(x)
        b = toyfw.add(a, x)
        c = toyfw.mul(b, b)
        d = toyfw.matmul(c, w)
        e = toyfw.reshape(d, (d.array.size,))
        f = toyfw.pad(e, 2, 2)
        g = toyfw.shift(f, 3)
        h = toyfw.norm(g)
        return toyfw.sumall(h)


class ChunkModel(toyfw.Module):
    def forward(self, x):
        a, b = toyfw.chunk(x, 2, axis=0)
        return toyfw.add(a, b)


class NegativeShift(toyfw.Module):
    def forward(self, x):
        return toyfw.shift(x, -1)


class AsymmetricPad(toyfw.Module):
    def forward(self, x):
        return toyfw.pad(x, 1, 2)


class WithConstant(toyfw.Module):
    def __init__(self):
        self.scale = toyfw.tensor([[2.0]])

    def forward(self, x):
        return toyfw.mul(x, self.scale)


def test_fault_free_paths_agree_bitwise():
    rng = np.random.default_rng(1)
    x = toyfw.randn(rng, (4, 6))
    w = toyfw.randn(rng, (6, 3))
    eager, compiled = run_both(FaultFree(), x, w)
    assert len(eager) == len(compiled) == 1
    assert np.array_equal(eager[0].array, compiled[0].array)


def test_chunk_agrees_and_multi_output_tracing_works():
    rng = np.random.default_rng(2)
    x = toyfw.randn(rng, (6, 4))
    eager, compiled = run_both(ChunkModel(), x)
    assert np.array_equal(eager[0].array, compiled[0].array)


def test_model_constants_enter_the_graph():
    rng = np.random.default_rng(3)
    x = toyfw.randn(rng, (2, 2))
    eager, compiled = run_both(WithConstant(), x)
    assert np.array_equal(eager[0].array, compiled[0].array)


def test_planted_numerical_fault_on_negative_shift():
    rng = np.random.default_rng(4)
    x = toyfw.randn(rng, (3, 8))
    eager, compiled = run_both(NegativeShift(), x)
    assert not np.array_equal(eager[0].array, compiled[0].array)
    # deterministic given inputs: same inputs, same divergence
    eager2, compiled2 = run_both(NegativeShift(), x)
    assert np.array_equal(eager[0].array, eager2[0].array)
    assert np.array_equal(compiled[0].array, compiled2[0].array)


class PositiveShift(toyfw.Module):
    def forward(self, x):
        return toyfw.shift(x, 2)


def test_positive_shift_is_fault_free():
    rng = np.random.default_rng(5)
    x = toyfw.randn(rng, (3, 8))
    eager, compiled = run_both(PositiveShift(), x)
    assert np.array_equal(eager[0].array, compiled[0].array)


def test_planted_behavioral_fault_on_asymmetric_pad():
    rng = np.random.default_rng(6)
    x = toyfw.randn(rng, (2, 5))
    model = AsymmetricPad()
    assert model(x).array.shape == (2, 8)  # eager path is fine
    with pytest.raises(toyfw.ToyCompileError, match="negative dimension"):
        toyfw.compile(model)(x)


def test_symmetric_pad_agrees():
    rng = np.random.default_rng(7)
    x = toyfw.randn(rng, (2, 5))

    class Sym(toyfw.Module):
        def forward(self, x):
            return toyfw.pad(x, 2, 2, value=1.5)

    eager, compiled = run_both(Sym(), x)
    assert np.array_equal(eager[0].array, compiled[0].array)


def test_negative_pad_width_raises_on_both_paths():
    rng = np.random.default_rng(8)
    x = toyfw.randn(rng, (2, 3))

    class Bad(toyfw.Module):
        def forward(self, x):
            return toyfw.pad(x, -1, 1)

    with pytest.raises(ValueError):
        Bad()(x)
    with pytest.raises(ValueError):
        toyfw.compile(Bad())(x)


def test_seeded_inputs_are_reproducible():
    a = toyfw.randn(np.random.default_rng(99), (3, 3))
    b = toyfw.randn(np.random.default_rng(99), (3, 3))
    assert np.array_equal(a.array, b.array)
