from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meritsel.core import Population
from meritsel.errors import ArgumentError, DimensionError
from meritsel.fairness import (
    GroupAffiliation,
    ParityConstraint,
    load_constraint,
    marginal_jacobian,
    parity_gap,
    parity_penalty,
    parity_penalty_gradient,
    parity_penalty_gradient_theta,
    set_satisfies_parity,
)
from meritsel.policies import LogisticThresholdPolicy, SeparableLinearPolicy, SoftmaxPolicy, TabularPolicy


def groups(labels: str) -> GroupAffiliation:
    return GroupAffiliation.from_labels(list(labels), group_a="M")


def central_diff(f, theta, h=1e-6):
    g = np.zeros_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        g[k] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


class TestAffiliation:
    def test_direction(self):
        g = groups("MMF")
        assert np.allclose(g.direction, [0.5, 0.5, -1.0])
        assert g.direction.sum() == pytest.approx(0.0)

    def test_rejects_non_bipartition(self):
        with pytest.raises(ArgumentError):
            GroupAffiliation([1, 0, 1], [1, 1, 0])
        with pytest.raises(ArgumentError):
            GroupAffiliation([1, 1], [0, 0])
        with pytest.raises(DimensionError):
            GroupAffiliation([1, 0], [0, 1, 1])

    def test_from_labels_needs_two_values(self):
        with pytest.raises(ArgumentError):
            GroupAffiliation.from_labels(["a", "b", "c"])
        assert GroupAffiliation.from_labels(["x", "y", "x"]).M.tolist() == [1, 0, 1]


class TestParityGap:
    def test_equal_rates(self):
        assert parity_gap(SeparableLinearPolicy([0.3, 0.7, 0.5, 0.5]), groups("MMFF")) == pytest.approx(0.0)

    def test_disjoint_selection(self):
        assert parity_gap(SeparableLinearPolicy([1, 1, 0, 0]), groups("MMFF")) == 1.0

    def test_tabular_policy(self):
        p = np.zeros(8)
        p[0b011] = 0.5
        p[0b100] = 0.5
        # marginals (0.5, 0.5, 0.5)
        assert parity_gap(TabularPolicy(p), groups("MMF")) == pytest.approx(0.0, abs=1e-15)

    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            parity_gap(SeparableLinearPolicy([0.5, 0.5]), groups("MMF"))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=2, max_size=10), st.integers(0, 2**16))
    def test_swap_invariance(self, theta, bits):
        n = len(theta)
        M = np.array([(bits >> i) & 1 for i in range(n)], dtype=float)
        M[0], M[1] = 1.0, 0.0
        pi = SeparableLinearPolicy(theta)
        assert parity_gap(pi, GroupAffiliation(M, 1 - M)) == pytest.approx(parity_gap(pi, GroupAffiliation(1 - M, M)), abs=1e-15)


class TestPenalty:
    def test_modes(self):
        c = ParityConstraint(0.1, groups("MF"))
        pi = SeparableLinearPolicy([0.8, 0.2])
        assert parity_penalty(pi, c, "penalty") == pytest.approx(0.36)
        assert parity_penalty(pi, c) == pytest.approx(0.26)
        with pytest.raises(ArgumentError):
            parity_penalty(pi, c, "other")

    def test_epsilon_range(self):
        with pytest.raises(ArgumentError):
            ParityConstraint(1.5, groups("MF"))

    def test_gradient_wrt_marginals(self, rng):
        g = groups("MMFMF")
        c = ParityConstraint(0.1, g)
        theta = rng.random(5)
        fd = central_diff(lambda t: parity_penalty(SeparableLinearPolicy(np.clip(t, 0, 1)), c, "penalty"), theta)
        assert np.allclose(parity_penalty_gradient(SeparableLinearPolicy(theta), c), fd, atol=1e-8)

    def test_theta_gradient_threshold(self, rng):
        X = rng.normal(size=(6, 3))
        c = ParityConstraint(0.05, groups("MFMFFM"))
        theta = rng.normal(size=3)
        fd = central_diff(lambda t: parity_penalty(LogisticThresholdPolicy(t, X), c, "penalty"), theta)
        assert np.allclose(parity_penalty_gradient_theta(LogisticThresholdPolicy(theta, X), c), fd, atol=1e-8)

    def test_theta_gradient_softmax(self, rng):
        c = ParityConstraint(0.05, groups("MFMFF"))
        theta = rng.normal(size=5)
        fd = central_diff(lambda t: parity_penalty(SoftmaxPolicy(t, 1.7), c, "penalty"), theta)
        assert np.allclose(parity_penalty_gradient_theta(SoftmaxPolicy(theta, 1.7), c), fd, atol=1e-8)

    def test_jacobian_needs_parametric_family(self):
        with pytest.raises(ArgumentError):
            marginal_jacobian(TabularPolicy.uniform(2))


class TestSetParity:
    def test_boundary_is_feasible(self):
        c = ParityConstraint(0.5, groups("MMFF"))
        # fractions 1/2 and 0
        assert set_satisfies_parity([1, 0, 0, 0], c)

    def test_violation(self):
        c = ParityConstraint(0.1, groups("MMFF"))
        assert not set_satisfies_parity([1, 1, 0, 0], c)
        assert set_satisfies_parity([1, 0, 1, 0], c)
        assert set_satisfies_parity([0, 0, 0, 0], c)


class TestLoadConstraint:
    def test_from_dict(self):
        x = Population(np.zeros((3, 1)), {"gender": ["M", "F", "M"]})
        c = load_constraint({"epsilon": 0.2, "group_attr": "gender", "group_a": "M"}, x)
        assert c.epsilon == 0.2 and c.groups.M.tolist() == [1, 0, 1]

    def test_from_file(self, tmp_path):
        x = Population(np.zeros((2, 1)), {"sex": ["F", "M"]})
        path = tmp_path / "c.json"
        path.write_text('{"epsilon": 0.3}')
        c = load_constraint(path, x)
        assert c.epsilon == 0.3 and c.groups.n == 2
