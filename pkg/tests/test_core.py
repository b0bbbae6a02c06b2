from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import A, B, C, D, bitmask, blank_population, example_table, random_distribution, tabular_oracle
from meritsel.core import (
    DeterministicTable,
    DiscreteDistribution,
    ExpectedUtilityOracle,
    Linear,
    LinearPredictor,
    LogLinear,
    Population,
    Tabular,
    bits_of,
    estimate_policy_utility,
    expected_set_utility,
    forced_policy_utility,
    policy_utility,
    set_utility,
    transform,
)
from meritsel.errors import ArgumentError, CapacityError, DimensionError, ModelError
from meritsel.policies import SeparableLinearPolicy, TabularPolicy, deterministic_policy


def sel(n, *members):
    a = np.zeros(n, dtype=np.uint8)
    a[list(members)] = 1
    return a


class TestSetUtility:
    def test_tabular_lookup(self):
        assert set_utility(Tabular(example_table()), sel(4, A, B), None) == 2.0

    def test_empty_linear_is_zero(self):
        assert set_utility(Linear(0.0), np.zeros(3), np.ones((3, 2))) == 0.0

    def test_log_linear_unit_sum(self):
        assert set_utility(LogLinear(0.0, m=1), [1, 1], [[0.5], [0.5]]) == pytest.approx(0.0, abs=1e-15)

    def test_log_linear_formula(self):
        y = np.array([[0.2, 0.4], [0.3, 0.1], [0.9, 0.6]])
        a = sel(3, 0, 2)
        want = math.log(0.2 + 0.9) + math.log(0.4 + 0.6) - 0.25 * 2
        assert set_utility(LogLinear(0.25), a, y) == pytest.approx(want, rel=1e-14)

    def test_log_floor_on_empty_selection(self):
        assert set_utility(LogLinear(0.0, floor=1e-9), np.zeros(2), np.ones((2, 3))) == pytest.approx(3 * math.log(1e-9))

    def test_linear_uses_row_means(self):
        y = np.array([[0.2, 0.4], [1.0, 0.0]])
        assert set_utility(Linear(0.1), [1, 1], y) == pytest.approx(0.3 + 0.5 - 0.2)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            set_utility(Linear(0.0), [1, 0, 1], np.ones((2, 1)))
        with pytest.raises(DimensionError):
            set_utility(Tabular(example_table()), [1, 0, 1], None)

    def test_log_linear_wrong_width(self):
        with pytest.raises(DimensionError):
            set_utility(LogLinear(0.0, m=3), [1], [[0.5, 0.5]])

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(0, 1), min_size=6, max_size=6),
        st.integers(0, 1),
        st.integers(0, 1),
        st.floats(0, 0.5),
        st.floats(0, 1),
    )
    def test_log_linear_monotone_in_selected_outcomes(self, ys, r, j, bump, cost):
        y = np.array(ys).reshape(3, 2)
        a = np.array([1, 1, 0], dtype=np.uint8)  # rows 0 and 1 are selected
        y2 = y.copy()
        y2[r, j] = min(1.0, y2[r, j] + bump)
        assert set_utility(LogLinear(cost), a, y2) >= set_utility(LogLinear(cost), a, y)


class TestExpectedSetUtility:
    def test_point_mass_equals_set_utility(self, rng):
        y = rng.random((4, 2))
        o = ExpectedUtilityOracle(LogLinear(0.1), DiscreteDistribution(y[None], [1.0]))
        a = sel(4, 0, 3)
        assert expected_set_utility(o, a, blank_population(4)) == set_utility(LogLinear(0.1), a, y)

    def test_two_atoms_convex_combination(self, rng):
        y1, y2 = rng.random((4, 1)), rng.random((4, 1))
        o = ExpectedUtilityOracle(Linear(0.0), DiscreteDistribution(np.stack([y1, y2]), [0.25, 0.75]))
        a = sel(4, 1, 2)
        want = 0.25 * set_utility(Linear(0.0), a, y1) + 0.75 * set_utility(Linear(0.0), a, y2)
        assert expected_set_utility(o, a, blank_population(4)) == pytest.approx(want, rel=1e-14)

    def test_linear_predictor_matches_brute_force(self, rng):
        x = Population(rng.random((4, 3)))
        coef, icpt = rng.normal(size=(3, 2)), rng.normal(size=2) * 0.2
        o = ExpectedUtilityOracle(LogLinear(0.05), LinearPredictor(coef, icpt))
        for a in itertools.product([0, 1], repeat=4):
            want = 0.0
            for j in range(2):
                s = 0.0
                for i in range(4):
                    yij = min(1.0, max(0.0, sum(x.features[i, k] * coef[k, j] for k in range(3)) + icpt[j]))
                    s += a[i] * yij
                want += math.log(max(1e-9, s))
            want -= 0.05 * sum(a)
            assert expected_set_utility(o, a, x) == pytest.approx(want, rel=1e-12, abs=1e-12)

    def test_selection_dependent_distribution(self):
        support = np.array([[[0.0], [1.0]], [[1.0], [1.0]]])
        o = ExpectedUtilityOracle(Linear(0.0), DiscreteDistribution(support, lambda a: np.array([a[0], 1 - a[0]], float)))
        x = blank_population(2)
        assert expected_set_utility(o, [1, 0], x) == 0.0
        assert expected_set_utility(o, [0, 1], x) == 1.0

    def test_unnormalized_distribution(self):
        o = ExpectedUtilityOracle(Linear(0.0), DiscreteDistribution(np.ones((2, 2, 1)), [0.5, 0.6]))
        with pytest.raises(ModelError):
            expected_set_utility(o, [1, 0], blank_population(2))

    def test_predictions_are_clipped(self):
        model = LinearPredictor([[5.0]], [-1.0])
        y = model.predict(Population([[0.0], [0.5], [1.0]]))
        assert y.min() == 0.0 and y.max() == 1.0


class TestPolicyUtility:
    def test_uniform_example(self, example):
        o, x = example
        assert policy_utility(o, TabularPolicy.uniform(4), x) == pytest.approx(4 / 16, abs=1e-15)

    def test_point_mass(self, example):
        o, x = example
        for m in range(16):
            a = bits_of(m, 4)
            assert policy_utility(o, TabularPolicy.point_mass(a), x) == example_table()[m]
            assert policy_utility(o, deterministic_policy(a), x) == example_table()[m]

    def test_mc_agrees_with_exact(self, rng):
        table = rng.normal(size=64)
        o, x = tabular_oracle(table), blank_population(6)
        pi = SeparableLinearPolicy(np.full(6, 0.5))
        exact = policy_utility(o, pi, x)
        est = estimate_policy_utility(o, pi, x, 100_000, 3)
        assert abs(est.mean - exact) < 3 * est.stderr

    def test_mc_is_deterministic_per_seed(self, rng):
        o, x = tabular_oracle(rng.normal(size=32)), blank_population(5)
        pi = SeparableLinearPolicy(rng.random(5))
        assert policy_utility(o, pi, x, "mc", 500, 9) == policy_utility(o, pi, x, "mc", 500, 9)

    def test_capacity(self):
        x = Population(np.zeros((21, 1)))
        o = ExpectedUtilityOracle(Linear(0.0), DeterministicTable(np.ones((21, 1))))
        with pytest.raises(CapacityError):
            policy_utility(o, SeparableLinearPolicy(np.full(21, 0.5)), x)
        assert policy_utility(o, SeparableLinearPolicy(np.full(21, 0.5)), x, "mc", 10, 0) > 0

    @pytest.mark.parametrize("n", [2, 4, 6, 8])
    def test_exact_vs_mc_within_four_stderr(self, rng, n):
        o, x = tabular_oracle(rng.normal(size=1 << n)), blank_population(n)
        pi = TabularPolicy(random_distribution(rng, 1 << n))
        est = estimate_policy_utility(o, pi, x, 10_000, 1)
        assert abs(est.mean - policy_utility(o, pi, x)) < 4 * est.stderr


class TestForcedPolicyUtility:
    def test_uniform_force_a(self, example):
        o, x = example
        assert forced_policy_utility(o, TabularPolicy.uniform(4), x, [A]) == pytest.approx(6 / 16, abs=1e-15)

    def test_empty_force_is_identity(self, rng):
        o, x = tabular_oracle(rng.normal(size=32)), blank_population(5)
        pi = TabularPolicy(random_distribution(rng, 32))
        assert forced_policy_utility(o, pi, x) == pytest.approx(policy_utility(o, pi, x), abs=1e-15)

    def test_include_and_exclude(self, example):
        o, x = example
        pi = TabularPolicy.point_mass(sel(4, C, D))
        assert forced_policy_utility(o, pi, x, [A], [D]) == 1.0  # U({A, C})

    def test_overlap_rejected(self, example):
        o, x = example
        with pytest.raises(ArgumentError):
            forced_policy_utility(o, TabularPolicy.uniform(4), x, [A], [A])
        with pytest.raises(ArgumentError):
            transform(sel(4), [1], [1])

    def test_matches_transformed_enumeration(self, rng):
        n = 5
        table = rng.normal(size=1 << n)
        o, x = tabular_oracle(table), blank_population(n)
        p = random_distribution(rng, 1 << n)
        pi = TabularPolicy(p)
        want = sum(p[m] * table[int(np.dot(transform(bits_of(m, n), [1, 3], [0]), 1 << np.arange(n)))] for m in range(1 << n))
        assert forced_policy_utility(o, pi, x, [1, 3], [0]) == pytest.approx(want, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 4))
    def test_force_include_idempotent(self, seed, i):
        r = np.random.default_rng(seed)
        o, x = tabular_oracle(r.normal(size=32)), blank_population(5)
        p = random_distribution(r, 32)
        once = forced_policy_utility(o, TabularPolicy(p), x, [i])
        # push the mass onto a + i explicitly, then force i again
        moved = np.zeros(32)
        for m in range(32):
            moved[m | (1 << i)] += p[m]
        assert forced_policy_utility(o, TabularPolicy(moved), x, [i]) == pytest.approx(once, abs=1e-12)


class TestPopulation:
    def test_csv_round_trip(self, tmp_path, rng):
        x = Population(rng.random((5, 2)), {"gender": list("MFMFF")}, feature_names=("a", "b"))
        x.to_csv(tmp_path / "p.csv")
        y = Population.from_csv(tmp_path / "p.csv")
        assert np.array_equal(x.features, y.features)
        assert list(y.labels("gender")) == list("MFMFF")
        assert y.feature_names == ("a", "b")

    def test_bad_csv_reports_line(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("id,group,f1\n0,M,0.5\n1,F,oops\n")
        with pytest.raises(ArgumentError, match=":3:"):
            Population.from_csv(path)

    def test_invariants(self):
        with pytest.raises(ArgumentError):
            Population(np.zeros((0, 2)))
        with pytest.raises(ArgumentError):
            Population([[np.nan]])
        with pytest.raises(DimensionError):
            Population(np.zeros((2, 1)), {"gender": ["M"]})

    def test_tabular_csv_round_trip(self, tmp_path):
        u = Tabular(example_table())
        u.to_csv(tmp_path / "u.csv")
        assert np.array_equal(Tabular.from_csv(tmp_path / "u.csv").table, u.table)

    def test_tabular_table_size(self):
        with pytest.raises(DimensionError):
            Tabular(np.zeros(6))


def test_bitmask_convention():
    assert bitmask(A, B) == 3 and bitmask(C, D) == 12
    assert list(bits_of(bitmask(A, C), 4)) == [1, 0, 1, 0]
