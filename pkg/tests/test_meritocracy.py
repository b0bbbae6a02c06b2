from __future__ import annotations

import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import A, B, C, D, bitmask, blank_population, two_optimal_sets_instance, random_distribution, tabular_oracle
from meritsel.contribution import emc_exact
from meritsel.core import bits_of, forced_policy_utility, policy_utility
from meritsel.errors import CapacityError
from meritsel.meritocracy import audit, check_local_stability, check_swap_stability, dev_local, dev_swap
from meritsel.policies import SeparableLinearPolicy, TabularPolicy


def forced_mass(p: np.ndarray, include=(), exclude=()) -> np.ndarray:
    """Move every set's mass to the set with ``include`` added and ``exclude`` removed."""
    out = np.zeros_like(p)
    add = sum(1 << i for i in include)
    drop = sum(1 << j for j in exclude)
    for m, w in enumerate(p):
        out[(m | add) & ~drop] += w
    return out


def brute_forced(table, p, include=(), exclude=()) -> float:
    return float(forced_mass(p, include, exclude) @ table)


def brute_dev_swap(table, p, n) -> float:
    marg = [sum(p[m] for m in range(1 << n) if m >> i & 1) for i in range(n)]
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            w = max(0.0, marg[i] - marg[j])
            g = max(0.0, brute_forced(table, p, [j], [i]) - brute_forced(table, p, [i], [j]))
            total += w * g
    return total


def random_instance(r, n, sparsity=0.0):
    return r.normal(size=1 << n), random_distribution(r, 1 << n, sparsity)


class TestExample:
    def test_uniform_is_swap_stable_not_local(self, example):
        o, x = example
        rep = audit(o, TabularPolicy.uniform(4), x)
        assert rep.swap_stable and not rep.local_stable and not rep.meritocratic
        assert A in [w[0] for w in rep.local_witnesses]
        assert rep.dev_swap == 0.0

    def test_uniform_dev_local(self, example):
        o, x = example
        emc = emc_exact(o, TabularPolicy.uniform(4), x).values
        assert emc[A] == pytest.approx(2 / 16, abs=1e-15)
        assert dev_local(o, TabularPolicy.uniform(4), x) == pytest.approx(emc[emc > 0].sum(), abs=1e-15)

    def test_point_mass_cd_is_locally_stable(self, example):
        o, x = example
        a = bits_of(bitmask(C, D), 4)
        assert check_local_stability(o, TabularPolicy.point_mass(a), x)[0]

    def test_saturated_policy(self, example):
        o, x = example
        pi = SeparableLinearPolicy(np.ones(4))
        assert check_local_stability(o, pi, x) == (True, [])
        assert dev_local(o, pi, x) == 0.0
        assert dev_swap(o, pi, x) == 0.0

    def test_optimum_is_meritocratic(self, example):
        o, x = example
        rep = audit(o, TabularPolicy.point_mass(bits_of(bitmask(A, B), 4)), x)
        assert rep.meritocratic and rep.dev_swap == 0.0 and rep.dev_local == 0.0


class TestArgmaxPolicies:
    @pytest.mark.parametrize("seed", range(10))
    def test_deterministic_argmax_is_meritocratic(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(2, 9))
        t = r.normal(size=1 << n)
        o, x = tabular_oracle(t), blank_population(n)
        rep = audit(o, TabularPolicy.point_mass(bits_of(int(np.argmax(t)), n)), x, tol=1e-9)
        assert rep.meritocratic and rep.dev_swap == 0 and rep.dev_local == 0


class TestTwoOptimalSets:
    def test_verdicts(self):
        o, pi, x = two_optimal_sets_instance()
        rep = audit(o, pi, x)
        assert rep.local_stable and not rep.swap_stable
        assert rep.dev_local == 0.0

    def test_witness(self):
        o, pi, x = two_optimal_sets_instance()
        stable, wit = check_swap_stability(o, pi, x)
        assert not stable
        assert len(wit) == 1
        i, j, gap = wit[0]
        assert (i, j) == (0, 1) and gap == pytest.approx(-1 / 3, abs=1e-12)

    def test_dev_swap_matches_brute_force(self):
        o, pi, x = two_optimal_sets_instance()
        want = brute_dev_swap(o.table(x), pi.probs, 4)
        assert want == pytest.approx(1 / 9, abs=1e-15)
        assert dev_swap(o, pi, x) == pytest.approx(want, abs=1e-12)


class TestEquivalences:
    @pytest.mark.parametrize("seed", range(20))
    def test_swap_condition_via_doubly_removed_policy(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(2, 7))
        t, p = random_instance(r, n, sparsity=0.3)
        o, x = tabular_oracle(t), blank_population(n)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                lhs = forced_policy_utility(o, TabularPolicy(p), x, [i], [j]) - forced_policy_utility(o, TabularPolicy(p), x, [j], [i])
                emc = emc_exact(o, TabularPolicy(forced_mass(p, (), (i, j))), x).values
                rhs = emc[i] - emc[j]
                assert lhs == pytest.approx(rhs, abs=1e-9)
                if abs(lhs) > 1e-9:
                    assert (lhs >= 0) == (rhs >= 0)

    @pytest.mark.parametrize("seed", range(20))
    def test_local_condition_via_emc(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(1, 7))
        t, p = random_instance(r, n)
        o, x, pi = tabular_oracle(t), blank_population(n), TabularPolicy(p)
        emc = emc_exact(o, pi, x).values
        base = brute_forced(t, p)
        for i in range(n):
            diff = base - brute_forced(t, p, [i])
            assert -diff == pytest.approx(emc[i], abs=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_emc_of_removed_policy_is_forced_difference(self, seed):
        r = np.random.default_rng(seed)
        n = 5
        t, p = random_instance(r, n)
        o, x = tabular_oracle(t), blank_population(n)
        for i in range(n):
            for j in range(n):
                if i != j:
                    emc = emc_exact(o, TabularPolicy(forced_mass(p, (), (i, j))), x).values[i]
                    want = brute_forced(t, p, [i], [j]) - brute_forced(t, p, [], [i, j])
                    assert emc == pytest.approx(want, abs=1e-10)


class TestDeviationProperties:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.sampled_from([0.0, 0.5]))
    def test_nonnegative_and_zero_iff_stable(self, seed, n, sparsity):
        r = np.random.default_rng(seed)
        t, p = random_instance(r, n, sparsity)
        o, x, pi = tabular_oracle(t), blank_population(n), TabularPolicy(p)
        ds, dl = dev_swap(o, pi, x), dev_local(o, pi, x)
        assert ds >= 0 and dl >= 0
        assert (ds == 0) == check_swap_stability(o, pi, x, tol=0.0)[0]
        assert (dl == 0) == check_local_stability(o, pi, x, tol=0.0)[0]
        assert ds == pytest.approx(brute_dev_swap(t, p, n), abs=1e-10)

    def test_uniform_policy_has_zero_dev_swap(self, rng):
        for n in range(1, 7):
            o, x = tabular_oracle(rng.normal(size=1 << n)), blank_population(n)
            assert dev_swap(o, TabularPolicy.uniform(n), x) == 0.0

    def test_capacity(self):
        from meritsel.core import DeterministicTable, ExpectedUtilityOracle, Linear, Population

        x = Population(np.zeros((21, 1)))
        o = ExpectedUtilityOracle(Linear(0.0), DeterministicTable(np.ones((21, 1))))
        pi = SeparableLinearPolicy(np.full(21, 0.5))
        for f in (dev_swap, dev_local, check_swap_stability, check_local_stability):
            with pytest.raises(CapacityError):
                f(o, pi, x)
        with pytest.raises(CapacityError):
            audit(o, pi, x, method="exact")


class TestMonteCarloAudit:
    def test_verdicts_suppressed(self):
        from meritsel.core import DeterministicTable, ExpectedUtilityOracle, LogLinear, Population

        r = np.random.default_rng(0)
        n = 30
        x = Population(np.zeros((n, 1)))
        o = ExpectedUtilityOracle(LogLinear(0.05), DeterministicTable(r.random((n, 2))))
        rep = audit(o, SeparableLinearPolicy(r.random(n)), x, n_samples=50, seed=4)
        assert rep.method == "mc"
        assert rep.swap_stable is None and rep.local_stable is None and rep.meritocratic is None
        assert rep.dev_swap_se is not None and rep.dev_local_se is not None

    def test_agrees_with_exact(self, example):
        o, x = example
        pi = TabularPolicy.uniform(4)
        mc = audit(o, pi, x, method="mc", n_samples=20_000, seed=3)
        assert abs(mc.dev_local - dev_local(o, pi, x, tol=1e-8)) <= 4 * mc.dev_local_se + 1e-12


class TestSerialization:
    def test_json(self, example):
        o, x = example
        d = json.loads(audit(o, TabularPolicy.uniform(4), x).to_json())
        assert d["swap_stable"] is True and d["local_stable"] is False
        assert d["dev_local"] == pytest.approx(0.125)

    def test_csv_row(self, example):
        o, x = example
        pi = TabularPolicy.uniform(4)
        text = audit(o, pi, x).to_csv("uniform", policy_utility(o, pi, x))
        rows = list(csv.DictReader(io.StringIO(text)))
        assert list(rows[0]) == ["policy_id", "utility", "dev_swap", "dev_local", "swap_stable", "local_stable"]
        assert rows[0]["policy_id"] == "uniform"
        assert float(rows[0]["utility"]) == 0.25
        assert rows[0]["swap_stable"] == "true" and rows[0]["local_stable"] == "false"

