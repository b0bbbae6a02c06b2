"""Expected marginal contribution (EMC) and Shapley values."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import comb

import numpy as np

from .core import ExpectedUtilityOracle, Population, _stderr, check_capacity
from .errors import ArgumentError, DimensionError

DEFAULT_MC_SAMPLES = 40


@dataclass(frozen=True)
class ContributionVector:
    """Per-candidate contributions with the method that produced them."""

    values: np.ndarray
    method: str = "exact"
    stderr: np.ndarray | None = None
    n_samples: int | None = None
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.stderr is not None:
            object.__setattr__(self, "stderr", np.asarray(self.stderr, dtype=float))

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    @property
    def label(self) -> str:
        if self.method == "mc":
            return f"mc(n={self.n_samples},seed={self.seed})"
        return self.method

    def to_csv(self, path, ids=None) -> None:
        ids = ids if ids is not None else [str(i) for i in range(len(self))]
        se = self.stderr if self.stderr is not None else np.zeros(len(self))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "value", "stderr", "method"])
            for i in range(len(self)):
                w.writerow([ids[i], repr(float(self.values[i])), repr(float(se[i])), self.label])


def _weights(pi, x: Population) -> np.ndarray:
    w = np.asarray(pi.set_probs(), dtype=float)
    if w.shape[0] != 1 << x.n:
        raise DimensionError(f"policy covers {int(np.log2(w.shape[0]))} candidates, population {x.n}")
    return w


def emc_exact(o: ExpectedUtilityOracle, pi, x: Population) -> ContributionVector:
    """Delta_i = sum_a pi(a) [U(a + i) - U(a)] by enumeration.

    ``pi`` may be any policy or a :class:`~meritsel.policies.ShapleyWeighting`.
    """
    check_capacity(x.n, "exact EMC")
    w = _weights(pi, x)
    T = o.table(x)
    masks = np.arange(len(T), dtype=np.int64)
    vals = np.array([w @ (T[masks | (1 << i)] - T) for i in range(x.n)])
    return ContributionVector(vals, "exact")


def emc_mc(o: ExpectedUtilityOracle, pi, x: Population, n: int = DEFAULT_MC_SAMPLES, seed=0) -> ContributionVector:
    """Sample-average EMC over ``n`` selections drawn from ``pi``."""
    if n < 1:
        raise ArgumentError("sample count must be >= 1")
    A = pi.sample(seed, size=n)
    g = o.gains(A, x)
    return ContributionVector(g.mean(axis=0), "mc", _stderr(g), n, seed if isinstance(seed, int) else None)


def shapley_exact(o: ExpectedUtilityOracle, x: Population) -> ContributionVector:
    """phi_i = (1/N) sum_{a: a_i = 0} C(N-1, |a|)^-1 [U(a + i) - U(a)]."""
    check_capacity(x.n, "exact Shapley values")
    n = x.n
    T = o.table(x)
    masks = np.arange(len(T), dtype=np.int64)
    sizes = np.zeros(len(T), dtype=np.int64)
    for k in range(n):
        sizes += (masks >> k) & 1
    inv_binom = np.array([1.0 / comb(n - 1, k) if k < n else 0.0 for k in range(n + 1)])
    vals = np.empty(n)
    for i in range(n):
        out = (masks >> i) & 1 == 0
        vals[i] = (inv_binom[sizes[out]] * (T[masks[out] | (1 << i)] - T[masks[out]])).sum() / n
    return ContributionVector(vals, "shapley")
