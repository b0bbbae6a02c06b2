from __future__ import annotations

import numpy as np
import pytest

from meritsel.core import ExpectedUtilityOracle, Population, Tabular
from meritsel.policies import TabularPolicy

A, B, C, D = 0, 1, 2, 3


def bitmask(*members: int) -> int:
    return sum(1 << m for m in members)


def example_table() -> np.ndarray:
    """Four candidates where only {A,B}, {A,C} and {C,D} have value."""
    t = np.zeros(16)
    t[bitmask(A, B)] = 2.0
    t[bitmask(A, C)] = 1.0
    t[bitmask(C, D)] = 1.0
    return t


def blank_population(n: int) -> Population:
    return Population(np.zeros((n, 0)))


def tabular_oracle(table) -> ExpectedUtilityOracle:
    return ExpectedUtilityOracle(Tabular(np.asarray(table, dtype=float)))


def never_d_without_a() -> TabularPolicy:
    p = np.zeros(16)
    for m in range(16):
        if m & bitmask(D) and not m & bitmask(A):
            continue
        p[m] = 1.0
    return TabularPolicy(p / p.sum())


def two_optimal_sets_instance():
    """Two optimal sets a = {0,2} (prob 2/3) and b = {1,3} (prob 1/3).

    With i = 0, j = 1: U(a - i + j) = U({1,2}) = U(a), U(b + i - j) = U({0,3}) = 0.
    """
    t = np.zeros(16)
    t[bitmask(0, 2)] = t[bitmask(1, 3)] = t[bitmask(1, 2)] = 1.0
    p = np.zeros(16)
    p[bitmask(0, 2)] = 2 / 3
    p[bitmask(1, 3)] = 1 / 3
    return tabular_oracle(t), TabularPolicy(p), blank_population(4)


def random_distribution(rng, size: int, sparsity: float = 0.0) -> np.ndarray:
    p = rng.random(size)
    if sparsity:
        p[rng.random(size) < sparsity] = 0.0
        if p.sum() == 0:
            p[rng.integers(size)] = 1.0
    return p / p.sum()


@pytest.fixture
def example():
    return tabular_oracle(example_table()), blank_population(4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
