"""Selection policies: set probabilities, marginals and sampling."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from math import comb
from typing import Union

import numpy as np

from .core import MAX_EXACT_N, PROB_TOL, Population, _read_csv, check_capacity, masks_of, selection, subset_bits
from .errors import ArgumentError, DimensionError


def sigmoid(z):
    """Logistic function, branching on sign so neither side overflows."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _product_probs(p: np.ndarray) -> np.ndarray:
    check_capacity(len(p), "set probabilities")
    v = np.ones(1)
    for pi in p:
        v = np.kron([1.0 - pi, pi], v)
    return v


class _Separable:
    """Mixin for policies that select each candidate independently."""

    def marginals(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def n(self) -> int:
        return len(self.marginals())

    def prob_of_set(self, a) -> float:
        a = selection(a, self.n)
        p = self.marginals()
        return float(np.prod(np.where(a == 1, p, 1.0 - p)))

    def set_probs(self) -> np.ndarray:
        return _product_probs(self.marginals())

    def sample(self, seed, size: int = 1) -> np.ndarray:
        u = _rng(seed).random((size, self.n))
        return (u < self.marginals()).astype(np.uint8)


@dataclass(frozen=True)
class SeparableLinearPolicy(_Separable):
    """Candidate i is selected independently with probability theta_i."""

    theta: np.ndarray

    def __post_init__(self):
        t = np.array(self.theta, dtype=float).ravel()
        if np.any(t < 0) or np.any(t > 1) or not np.all(np.isfinite(t)):
            raise ArgumentError("separable linear theta must lie in [0, 1]")
        t.setflags(write=False)
        object.__setattr__(self, "theta", t)

    def marginals(self) -> np.ndarray:
        return self.theta

    def to_dict(self) -> dict:
        return {"family": "separable_linear", "theta": self.theta.tolist()}


@dataclass(frozen=True)
class LogisticThresholdPolicy(_Separable):
    """Shared logistic rule over features: P(select i) = sigmoid(theta . x_i)."""

    theta: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        t = np.array(self.theta, dtype=float).ravel()
        X = np.array(self.features, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(t):
            raise DimensionError(f"theta has {len(t)} entries, features have shape {X.shape}")
        t.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "theta", t)
        object.__setattr__(self, "features", X)

    def scores(self) -> np.ndarray:
        return self.features @ self.theta

    def marginals(self) -> np.ndarray:
        return sigmoid(self.scores())

    def to_dict(self) -> dict:
        return {"family": "threshold", "theta": self.theta.tolist()}


@dataclass(frozen=True)
class SoftmaxPolicy:
    """pi(a) proportional to exp(beta * theta . a), normalized by exact enumeration."""

    theta: np.ndarray
    beta: float = 1.0

    def __post_init__(self):
        if self.beta < 0:
            raise ArgumentError("beta must be nonnegative")
        t = np.array(self.theta, dtype=float).ravel()
        t.setflags(write=False)
        object.__setattr__(self, "theta", t)

    @property
    def n(self) -> int:
        return len(self.theta)

    def set_probs(self) -> np.ndarray:
        check_capacity(self.n, "softmax normalization")
        logits = self.beta * (subset_bits(self.n).astype(float) @ self.theta)
        w = np.exp(logits - logits.max())
        return w / w.sum()

    def prob_of_set(self, a) -> float:
        a = selection(a, self.n)
        return float(self.set_probs()[masks_of(a[None])[0]])

    def marginals(self) -> np.ndarray:
        return _marginals_from_probs(self.set_probs(), self.n)

    def sample(self, seed, size: int = 1) -> np.ndarray:
        return _inverse_cdf_sample(self.set_probs(), self.n, seed, size)

    def to_dict(self) -> dict:
        return {"family": "softmax", "theta": self.theta.tolist(), "beta": self.beta}


@dataclass(frozen=True)
class TabularPolicy:
    """Explicit probability for each of the 2**N selections."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).ravel()
        n = int(round(np.log2(max(len(p), 1))))
        if len(p) < 2 or (1 << n) != len(p):
            raise DimensionError(f"table length {len(p)} is not a power of two")
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
            raise ArgumentError(f"tabular policy must be a distribution (sum = {p.sum()!r})")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n(self) -> int:
        return int(np.log2(len(self.probs)))

    def set_probs(self) -> np.ndarray:
        return self.probs

    def prob_of_set(self, a) -> float:
        a = selection(a, self.n)
        return float(self.probs[masks_of(a[None])[0]])

    def marginals(self) -> np.ndarray:
        return _marginals_from_probs(self.probs, self.n)

    def sample(self, seed, size: int = 1) -> np.ndarray:
        return _inverse_cdf_sample(self.probs, self.n, seed, size)

    @classmethod
    def point_mass(cls, a) -> "TabularPolicy":
        a = selection(a)
        p = np.zeros(1 << len(a))
        p[masks_of(a[None])[0]] = 1.0
        return cls(p)

    @classmethod
    def uniform(cls, n: int) -> "TabularPolicy":
        check_capacity(n, "a tabular policy")
        return cls(np.full(1 << n, 1.0 / (1 << n)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["subset_index", "prob"])
            for k, v in enumerate(self.probs):
                w.writerow([k, repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "TabularPolicy":
        rows = _read_csv(path)
        if rows[0] != ["subset_index", "prob"]:
            raise ArgumentError(f"{path}: header must be subset_index,prob")
        vals = {}
        for lineno, row in enumerate(rows[1:], start=2):
            try:
                vals[int(row[0])] = float(row[1])
            except (ValueError, IndexError):
                raise ArgumentError(f"{path}:{lineno}: cannot parse {row!r}") from None
        p = np.zeros(len(vals))
        for k, v in vals.items():
            if not 0 <= k < len(p):
                raise ArgumentError(f"{path}: subset_index {k} out of range")
            p[k] = v
        return cls(p)


Policy = Union[TabularPolicy, SeparableLinearPolicy, SoftmaxPolicy, LogisticThresholdPolicy]


def _marginals_from_probs(p: np.ndarray, n: int) -> np.ndarray:
    masks = np.arange(len(p), dtype=np.int64)
    return np.array([p[(masks >> i) & 1 == 1].sum() for i in range(n)])


def _inverse_cdf_sample(p: np.ndarray, n: int, seed, size: int) -> np.ndarray:
    cdf = np.cumsum(p)
    u = _rng(seed).random(size) * cdf[-1]
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(p) - 1)
    return ((idx[:, None] >> np.arange(n)) & 1).astype(np.uint8)


@dataclass(frozen=True)
class ShapleyWeighting:
    """Per-size egalitarian weights 1 / (N * C(N-1, |a|)).

    Not a probability distribution: the weights sum to the harmonic number
    H_N over all subsets, and the full set gets weight 0 (its marginal
    contributions vanish anyway).  For each fixed i the weights of sets
    without i sum to one, which is what makes the weighted EMC equal to
    the Shapley value.
    """

    n: int

    def set_probs(self) -> np.ndarray:
        check_capacity(self.n, "Shapley weights")
        sizes = subset_bits(self.n).sum(axis=1)
        w = np.zeros(1 << self.n)
        for k in range(self.n):
            w[sizes == k] = 1.0 / (self.n * comb(self.n - 1, k))
        return w

    set_weights = set_probs


# ---------------------------------------------------------------------------
# module-level operations


def prob_of_set(pi: Policy, a) -> float:
    return pi.prob_of_set(a)


def marginal_prob(pi: Policy, i: int) -> float:
    """pi(a_i = 1)."""
    n = pi.n
    if not 0 <= i < n:
        raise IndexError(f"candidate {i} out of range for N = {n}")
    if isinstance(pi, _Separable):
        return float(pi.marginals()[i])
    p = pi.set_probs()
    masks = np.arange(len(p), dtype=np.int64)
    return float(p[(masks >> i) & 1 == 1].sum())


def marginals(pi: Policy) -> np.ndarray:
    return np.asarray(pi.marginals(), dtype=float)


def sample(pi: Policy, rng_seed, size: int | None = None) -> np.ndarray:
    """One selection (or ``size`` of them as rows), deterministic per seed."""
    A = pi.sample(rng_seed, size=1 if size is None else size)
    return A[0] if size is None else A


def group_selection_rate(pi: Policy, members) -> float:
    """Average marginal selection probability over a group.

    ``members`` is a boolean mask or an index list.
    """
    idx = np.asarray(members)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    if idx.size == 0:
        raise ArgumentError("group is empty")
    return float(marginals(pi)[idx].mean())


def uniform_policy(n: int) -> SeparableLinearPolicy:
    """Independent coin flips, i.e. uniform over all 2**N selections."""
    return SeparableLinearPolicy(np.full(n, 0.5))


def deterministic_policy(a) -> SeparableLinearPolicy:
    """Point mass on selection ``a`` (works for any N)."""
    return SeparableLinearPolicy(selection(a).astype(float))


# ---------------------------------------------------------------------------
# serialization


def policy_to_json(pi: Policy) -> str:
    if isinstance(pi, TabularPolicy):
        raise ArgumentError("tabular policies serialize to CSV")
    return json.dumps(pi.to_dict())


def policy_from_dict(d: dict, x: Population | None = None, threshold_features: np.ndarray | None = None) -> Policy:
    try:
        family = d["family"]
        theta = np.asarray(d["theta"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ArgumentError(f"malformed policy: {exc}") from None
    if family == "separable_linear":
        return SeparableLinearPolicy(theta)
    if family == "softmax":
        return SoftmaxPolicy(theta, float(d.get("beta", 1.0)))
    if family == "threshold":
        X = threshold_features if threshold_features is not None else (x.features if x is not None else None)
        if X is None:
            raise ArgumentError("threshold policies need the population features")
        return LogisticThresholdPolicy(theta, X)
    raise ArgumentError(f"unknown policy family {family!r}")


def load_policy(path, x: Population | None = None) -> Policy:
    path = str(path)
    if path.endswith(".csv"):
        return TabularPolicy.from_csv(path)
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ArgumentError(f"{path}:{exc.lineno}: {exc.msg}") from None
    return policy_from_dict(d, x)


__all__ = [
    "MAX_EXACT_N",
    "LogisticThresholdPolicy",
    "Policy",
    "SeparableLinearPolicy",
    "ShapleyWeighting",
    "SoftmaxPolicy",
    "TabularPolicy",
    "deterministic_policy",
    "group_selection_rate",
    "load_policy",
    "marginal_prob",
    "marginals",
    "policy_from_dict",
    "policy_to_json",
    "prob_of_set",
    "sample",
    "sigmoid",
    "uniform_policy",
]
