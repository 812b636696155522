from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from feedfuzz.core import OperatorRecord
from feedfuzz.opsel import (
    OperatorSequence,
    SAParams,
    fitness,
    metropolis_accept,
    op_value,
    ops_selection,
    simulated_annealing,
    temperature_schedule,
    update_stats,
)


def make_table(spec: dict[str, tuple[int, int, int]]) -> dict[str, OperatorRecord]:
    return {
        name: OperatorRecord(name=name, used_times=x, exp_count=y, cov_count=z)
        for name, (x, y, z) in spec.items()
    }


def skewed_table(n_ops: int = 20, n_high: int = 3) -> dict[str, OperatorRecord]:
    spec = {}
    for i in range(n_high):
        spec[f"hot{i}"] = (0, 0, 500)
    for i in range(n_ops - n_high):
        spec[f"cold{i}"] = (50, 0, 0)
    return make_table(spec)


class TestOpValue:
    def test_initial_value_is_exactly_one(self):
        assert op_value(0, 0, 0) == 1.0

    def test_closed_form_values(self):
        # frozen from independent evaluation of the closed form
        assert op_value(1, 0, 0) == pytest.approx(0.5 / 1.5 + 0.5 + 0.5 - 1.0, abs=1e-15)
        assert op_value(1, 0, 0) == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert op_value(0, 1, 0) == pytest.approx(0.5 + 0.5 / math.e, abs=1e-12)
        assert op_value(0, 0, 100) == pytest.approx(2.0 - math.exp(-1.0), abs=1e-12)

    def test_negative_counters_rejected(self):
        with pytest.raises(ValueError):
            op_value(-1, 0, 0)

    def test_fresh_operator_table_starts_uniform_at_one(self):
        from feedfuzz.core import initial_state

        state = initial_state({"seed": 0, "operators": [{"name": n} for n in "abc"]})
        for rec in state.op_table.values():
            assert op_value(rec.used_times, rec.exp_count, rec.cov_count) == 1.0

    # Ranges are capped where float64 still resolves the change: the y term
    # (alpha * e**-y) drops below one ulp of V near y ~ 37 and the z term near
    # z ~ 3500, making the mathematically strict ordering a numerical tie.
    @given(
        st.integers(min_value=0, max_value=10**6),
        st.integers(min_value=0, max_value=30),
        st.integers(min_value=0, max_value=3000),
    )
    def test_strict_monotonicity(self, x, y, z):
        v = op_value(x, y, z)
        assert op_value(x + 1, y, z) < v
        assert op_value(x, y + 1, z) < v
        assert op_value(x, y, z + 100) > v


class TestFitness:
    def test_singleton_mean(self):
        table = make_table({"a": (0, 0, 0)})
        assert fitness(OperatorSequence(("a",)), table) == 1.0

    def test_mean_by_hand(self):
        # values 1.0 and 1/3 average to 2/3
        table = make_table({"a": (0, 0, 0), "b": (1, 0, 0)})
        assert fitness(OperatorSequence(("a", "b")), table) == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_permutation_invariant(self):
        table = make_table({"a": (3, 1, 40), "b": (1, 0, 7), "c": (9, 2, 0)})
        orders = [("a", "b", "c"), ("c", "a", "b"), ("b", "c", "a")]
        values = {fitness(OperatorSequence(o), table) for o in orders}
        assert len(values) == 1

    def test_unknown_operator_is_hard_error(self):
        table = make_table({"a": (0, 0, 0)})
        with pytest.raises(KeyError):
            fitness(OperatorSequence(("a", "ghost")), table)


class TestUpdateStats:
    def test_full_delta_for_every_op(self):
        table = make_table({"A": (0, 0, 0), "B": (0, 0, 0)})
        update_stats(table, ["A", "B"], delta_cov=7, exception_occurred=False)
        for name in ("A", "B"):
            assert table[name].used_times == 1
            assert table[name].exp_count == 0
            assert table[name].cov_count == 7

    def test_exception_flag(self):
        table = make_table({"A": (2, 0, 5)})
        update_stats(table, ["A"], delta_cov=0, exception_occurred=True)
        assert table["A"].used_times == 3
        assert table["A"].exp_count == 1
        assert table["A"].cov_count == 5

    def test_empty_last_ops_is_noop(self):
        table = make_table({"A": (0, 0, 0)})
        update_stats(table, [], delta_cov=9, exception_occurred=True)
        assert table["A"] == OperatorRecord(name="A")


class TestOpsSelection:
    def test_repair_returns_last_ops_and_mutates_nothing(self):
        table = skewed_table()
        before = {k: (v.used_times, v.exp_count, v.cov_count) for k, v in table.items()}
        seq = ops_selection(
            table,
            delta_cov=12,
            repair_pending=True,
            exception_occurred=False,
            last_ops=["cold3"],
            params=SAParams(),
            rng=np.random.default_rng(0),
        )
        assert list(seq) == ["cold3"]
        assert {k: (v.used_times, v.exp_count, v.cov_count) for k, v in table.items()} == before

    def test_repair_with_empty_last_ops_is_hard_error(self):
        with pytest.raises(ValueError):
            ops_selection(
                skewed_table(),
                delta_cov=0,
                repair_pending=True,
                exception_occurred=False,
                last_ops=[],
                params=SAParams(),
                rng=np.random.default_rng(0),
            )

    def test_first_iteration_draws_k_in_bounds(self):
        params = SAParams()
        seq = ops_selection(
            skewed_table(),
            delta_cov=0,
            repair_pending=False,
            exception_occurred=False,
            last_ops=[],
            params=params,
            rng=np.random.default_rng(1),
        )
        assert params.k_min <= len(seq) <= params.k_max
        assert len(set(seq)) == len(seq)

    def test_seeded_replay_is_identical(self):
        results = []
        for _ in range(2):
            table = skewed_table()
            results.append(
                ops_selection(
                    table,
                    delta_cov=3,
                    repair_pending=False,
                    exception_occurred=False,
                    last_ops=["cold0"],
                    params=SAParams(),
                    rng=np.random.default_rng(42),
                )
            )
        assert results[0] == results[1]


class TestSimulatedAnnealing:
    def test_temperature_schedule_literal_params(self):
        # independent oracle: smallest n with 100 * 0.99**n < 1.0
        n = 0
        t = 100.0
        while t >= 1.0:
            n += 1
            t *= 0.99
        assert n == 459
        params = SAParams(t0=100.0, ns=10, gamma=0.99, t_min=1.0)
        temps = temperature_schedule(params)
        assert len(temps) == 459
        assert len(temps) * params.ns == 4590

    def test_zero_delta_always_accepted(self):
        rng = np.random.default_rng(0)
        assert all(metropolis_accept(0.0, 100.0, rng) for _ in range(1000))

    def test_metropolis_probability(self):
        rng = np.random.default_rng(7)
        trials = 10_000
        hits = sum(metropolis_accept(-0.1, 100.0, rng) for _ in range(trials))
        assert hits / trials == pytest.approx(math.exp(-0.001), abs=0.01)

    def test_precomputed_threshold_matches_scalar_rule(self):
        # The annealer precomputes tau = T*ln(u); accepting when dF > tau must
        # equal the scalar Metropolis rule evaluated with the same u.
        rng = np.random.default_rng(3)
        for _ in range(2000):
            u = float(rng.random())
            if u == 0.0:
                continue
            delta_f = float(rng.uniform(-2, 0.5))
            temperature = float(rng.uniform(0.05, 100.0))
            tau = temperature * math.log(u)
            precomputed = delta_f >= 0.0 or delta_f > tau
            scalar = delta_f >= 0.0 or u < math.exp(delta_f / temperature)
            assert precomputed == scalar

    def test_hill_climbing_dominance(self):
        # final fitness beats the initial random draw in >=95% of seeded runs;
        # the initial draw is reproduced by replaying the annealer's sampling
        # with a generator cloned from the same seed
        from feedfuzz.opsel import _sample_subsets

        table = skewed_table()
        params = SAParams()
        names = tuple(table)
        draws = len(temperature_schedule(params)) * params.ns
        wins = 0
        trials = 1000
        for seed in range(trials):
            mirror = np.random.default_rng(seed)
            k = int(mirror.integers(params.k_min, params.k_max + 1))
            init_row = _sample_subsets(mirror, len(names), k, draws + 1)[0]
            init_fit = fitness([names[i] for i in init_row], table)
            final = simulated_annealing(names, table, params, np.random.default_rng(seed))
            if fitness(final, table) >= init_fit - 1e-12:
                wins += 1
        assert wins / trials >= 0.95

    def test_small_op_set_allows_k_clamp(self):
        table = make_table({"a": (0, 0, 0), "b": (1, 0, 0)})
        seq = simulated_annealing(tuple(table), table, SAParams(), np.random.default_rng(5))
        assert 1 <= len(seq) <= 2

    def test_op_set_smaller_than_k_min_rejected(self):
        table = make_table({"a": (0, 0, 0)})
        with pytest.raises(ValueError):
            simulated_annealing(tuple(table), table, SAParams(k_min=2, k_max=3),
                                np.random.default_rng(0))


class TestSAParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            SAParams(gamma=1.0)
        with pytest.raises(ValueError):
            SAParams(t_min=200.0)
        with pytest.raises(ValueError):
            SAParams(k_min=0)
        with pytest.raises(ValueError):
            SAParams(k_min=3, k_max=2)

    def test_paper_defaults(self):
        params = SAParams()
        assert (params.t0, params.ns, params.gamma) == (100.0, 10, 0.99)
        assert params.alpha == 0.5 and params.beta == 0.5
        assert (params.k_min, params.k_max) == (1, 3)


class TestOperatorSequence:
    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            OperatorSequence(("a", "a"))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            OperatorSequence(())
