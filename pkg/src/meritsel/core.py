"""Domain types and expected-utility evaluation.

Selections are length-N binary vectors.  Whenever all ``2**N`` selections
are enumerated, selection ``a`` sits at index ``sum(a[k] << k)``, i.e.
candidate 0 is the least significant bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .errors import ArgumentError, CapacityError, DimensionError, ModelError

MAX_EXACT_N = 20
PROB_TOL = 1e-12
_CHUNK = 1 << 16


# ---------------------------------------------------------------------------
# selections and subset enumeration


def subset_bits(n: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Bit matrix of the selections with indices ``start..stop-1``."""
    if stop is None:
        stop = 1 << n
    idx = np.arange(start, stop, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n, dtype=np.int64)) & 1).astype(np.uint8)


def mask_of(a) -> int:
    return int(sum(int(b) << k for k, b in enumerate(np.asarray(a).ravel())))


def masks_of(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.int64)
    return A @ (np.int64(1) << np.arange(A.shape[1], dtype=np.int64))


def bits_of(mask: int, n: int) -> np.ndarray:
    return ((int(mask) >> np.arange(n)) & 1).astype(np.uint8)


def selection(bits, n: int | None = None) -> np.ndarray:
    """Validate and return a selection as a uint8 vector."""
    a = np.asarray(bits)
    if a.ndim != 1:
        raise DimensionError(f"selection must be 1-d, got shape {a.shape}")
    if n is not None and a.shape[0] != n:
        raise DimensionError(f"selection has length {a.shape[0]}, population has {n}")
    if not np.all((a == 0) | (a == 1)):
        raise ArgumentError("selection entries must be 0 or 1")
    return a.astype(np.uint8)


def transform(a, include: Sequence[int] = (), exclude: Sequence[int] = ()) -> np.ndarray:
    """Return ``a`` with candidates in ``include`` forced in and ``exclude`` forced out."""
    include, exclude = set(include), set(exclude)
    if include & exclude:
        raise ArgumentError(f"candidates {sorted(include & exclude)} both included and excluded")
    out = np.array(a, dtype=np.uint8, copy=True)
    out[list(include)] = 1
    out[list(exclude)] = 0
    return out


def check_capacity(n: int, what: str = "exact enumeration") -> None:
    if n > MAX_EXACT_N:
        raise CapacityError(f"{what} needs N <= {MAX_EXACT_N}, got N = {n}")


# ---------------------------------------------------------------------------
# population


@dataclass(frozen=True)
class Population:
    """Candidate features plus categorical group labels.

    ``groups`` maps a group type (e.g. ``"gender"``) to one label per
    candidate.  Features may have zero columns.
    """

    features: np.ndarray
    groups: Mapping[str, np.ndarray] = field(default_factory=dict)
    ids: tuple[str, ...] = ()
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        feats = np.array(self.features, dtype=float)
        if feats.ndim == 1:
            feats = feats[:, None]
        if feats.ndim != 2:
            raise DimensionError("features must be an N x d matrix")
        n = feats.shape[0]
        if n < 1:
            raise ArgumentError("population needs at least one candidate")
        if not np.all(np.isfinite(feats)):
            raise ArgumentError("features must be finite")
        feats.setflags(write=False)
        groups = {}
        for name, labels in dict(self.groups).items():
            lab = np.asarray(labels).astype(str)
            if lab.shape != (n,):
                raise DimensionError(f"group {name!r} needs {n} labels, got shape {lab.shape}")
            lab.setflags(write=False)
            groups[name] = lab
        ids = tuple(str(i) for i in self.ids) if self.ids else tuple(str(i) for i in range(n))
        if len(ids) != n:
            raise DimensionError(f"{len(ids)} ids for {n} candidates")
        names = tuple(self.feature_names) or tuple(f"f{k + 1}" for k in range(feats.shape[1]))
        if len(names) != feats.shape[1]:
            raise DimensionError("feature_names length differs from feature count")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def labels(self, group_attr: str) -> np.ndarray:
        try:
            return self.groups[group_attr]
        except KeyError:
            raise ArgumentError(f"population has no group attribute {group_attr!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.features[:, self.feature_names.index(name)]

    def to_csv(self, path, group_attr: str | None = None) -> None:
        """Write ``id,group,f1..fd``."""
        if group_attr is None:
            group_attr = next(iter(self.groups), None)
        labels = self.groups[group_attr] if group_attr else np.full(self.n, "")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "group", *self.feature_names])
            for i in range(self.n):
                w.writerow([self.ids[i], labels[i], *(repr(float(v)) for v in self.features[i])])

    @classmethod
    def from_csv(cls, path, group_attr: str = "gender") -> "Population":
        rows = _read_csv(path)
        header, body = rows[0], rows[1:]
        if header[:2] != ["id", "group"]:
            raise ArgumentError(f"{path}: header must start with id,group")
        ids, labels, feats = [], [], []
        for lineno, row in enumerate(body, start=2):
            if len(row) != len(header):
                raise ArgumentError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            ids.append(row[0])
            labels.append(row[1])
            try:
                feats.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise ArgumentError(f"{path}:{lineno}: {exc}") from None
        feats_arr = np.array(feats, dtype=float).reshape(len(body), len(header) - 2)
        return cls(feats_arr, {group_attr: labels}, tuple(ids), tuple(header[2:]))


def _read_csv(path) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ArgumentError(f"{path}: empty file")
    return rows


# ---------------------------------------------------------------------------
# outcome models


@dataclass(frozen=True)
class DeterministicTable:
    """Known outcomes: one row of ``m`` values per candidate."""

    y: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    def predict(self, x: Population) -> np.ndarray:
        if self.y.shape[0] != x.n:
            raise DimensionError(f"outcome table has {self.y.shape[0]} rows, population {x.n}")
        return self.y


@dataclass(frozen=True)
class LinearPredictor:
    """Per-column affine predictor on the features, clipped to [0, 1]."""

    coef: np.ndarray  # d x m
    intercept: np.ndarray  # m
    ridge: bool = False
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        coef = np.array(self.coef, dtype=float)
        if coef.ndim == 1:
            coef = coef[:, None]
        intercept = np.atleast_1d(np.array(self.intercept, dtype=float))
        if intercept.shape != (coef.shape[1],):
            raise DimensionError("intercept length must equal the number of outcome columns")
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "intercept", intercept)

    def predict(self, x: Population) -> np.ndarray:
        if x.d != self.coef.shape[0]:
            raise DimensionError(f"model expects {self.coef.shape[0]} features, population has {x.d}")
        return np.clip(x.features @ self.coef + self.intercept, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "kind": "linear_predictor",
            "coef": self.coef.tolist(),
            "intercept": self.intercept.tolist(),
            "ridge": self.ridge,
            **{k: v for k, v in self.meta.items() if k not in ("coef", "intercept", "ridge", "kind")},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LinearPredictor":
        meta = {k: v for k, v in d.items() if k not in ("coef", "intercept", "ridge", "kind")}
        return cls(np.array(d["coef"]), np.array(d["intercept"]), bool(d.get("ridge", False)), meta)


ProbSpec = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finite-support outcome distribution, optionally depending on the selection.

    ``support`` has shape (K, N, m).  ``probs`` is either a length-K vector or a
    callable mapping a selection to such a vector.
    """

    support: np.ndarray
    probs: ProbSpec

    def __post_init__(self):
        sup = np.array(self.support, dtype=float)
        if sup.ndim == 2:
            sup = sup[:, :, None]
        if sup.ndim != 3:
            raise DimensionError("support must have shape (K, N, m)")
        object.__setattr__(self, "support", sup)
        if not callable(self.probs):
            object.__setattr__(self, "probs", np.array(self.probs, dtype=float))

    def weights(self, a: np.ndarray) -> np.ndarray:
        p = np.asarray(self.probs(a) if callable(self.probs) else self.probs, dtype=float)
        if p.shape != (self.support.shape[0],):
            raise ModelError(f"expected {self.support.shape[0]} atom probabilities, got shape {p.shape}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
            raise ModelError(f"atom probabilities must be nonnegative and sum to 1 (sum = {p.sum()!r})")
        return p


OutcomeModel = Union[DeterministicTable, LinearPredictor, DiscreteDistribution]


# ---------------------------------------------------------------------------
# utility functions


@dataclass(frozen=True)
class LogLinear:
    """sum_j log(max(floor, sum_i a_i y_ij)) - cost * |a|"""

    cost: float = 0.0
    m: int | None = None
    floor: float = 1e-9

    def __post_init__(self):
        if self.cost < 0:
            raise ArgumentError("cost must be nonnegative")
        if self.floor <= 0:
            raise ArgumentError("log floor must be positive")

    def from_sums(self, sums: np.ndarray, counts: np.ndarray) -> np.ndarray:
        if self.m is not None and sums.shape[-1] != self.m:
            raise DimensionError(f"utility expects {self.m} outcome columns, got {sums.shape[-1]}")
        return np.log(np.maximum(self.floor, sums)).sum(axis=-1) - self.cost * counts


@dataclass(frozen=True)
class Linear:
    """sum_i a_i * mean_j(y_ij) - cost * |a|"""

    cost: float = 0.0

    def __post_init__(self):
        if self.cost < 0:
            raise ArgumentError("cost must be nonnegative")

    def from_sums(self, sums: np.ndarray, counts: np.ndarray) -> np.ndarray:
        return sums.mean(axis=-1) - self.cost * counts


@dataclass(frozen=True)
class Tabular:
    """Explicit value per subset, indexed by bitmask."""

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float).ravel()
        n = int(round(np.log2(max(len(t), 1))))
        if len(t) < 2 or (1 << n) != len(t):
            raise DimensionError(f"table length {len(t)} is not a power of two")
        check_capacity(n, "a tabular utility")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def n(self) -> int:
        return int(np.log2(len(self.table)))

    def lookup(self, A: np.ndarray) -> np.ndarray:
        if A.shape[-1] != self.n:
            raise DimensionError(f"tabular utility is over {self.n} candidates, selection has {A.shape[-1]}")
        return self.table[masks_of(A.reshape(-1, self.n))].reshape(A.shape[:-1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["subset_index", "utility"])
            for k, v in enumerate(self.table):
                w.writerow([k, repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "Tabular":
        rows = _read_csv(path)
        if rows[0] != ["subset_index", "utility"]:
            raise ArgumentError(f"{path}: header must be subset_index,utility")
        vals = {}
        for lineno, row in enumerate(rows[1:], start=2):
            try:
                vals[int(row[0])] = float(row[1])
            except (ValueError, IndexError):
                raise ArgumentError(f"{path}:{lineno}: cannot parse {row!r}") from None
        table = np.zeros(len(vals))
        for k, v in vals.items():
            if not 0 <= k < len(vals):
                raise ArgumentError(f"{path}: subset_index {k} out of range")
            table[k] = v
        return cls(table)


UtilityFunction = Union[LogLinear, Linear, Tabular]


def _batch_set_utility(u: UtilityFunction, A: np.ndarray, y: np.ndarray | None) -> np.ndarray:
    if isinstance(u, Tabular):
        return u.lookup(A)
    if y is None:
        raise ModelError(f"{type(u).__name__} utility needs outcomes")
    if A.shape[-1] != y.shape[0]:
        raise DimensionError(f"selection length {A.shape[-1]} vs {y.shape[0]} outcome rows")
    Af = A.astype(float)
    return u.from_sums(Af @ y, Af.sum(axis=-1))


def set_utility(u: UtilityFunction, a, y) -> float:
    """Utility of selection ``a`` under realized outcomes ``y`` (N x m)."""
    a = selection(a)
    if y is not None:
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.shape[0] != a.shape[0]:
            raise DimensionError(f"outcomes have {y.shape[0]} rows, selection has length {a.shape[0]}")
    return float(_batch_set_utility(u, a[None, :], y)[0])


# ---------------------------------------------------------------------------
# expected utility


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n: int


def _stderr(samples: np.ndarray, axis: int = 0) -> np.ndarray:
    n = samples.shape[axis]
    if n < 2:
        return np.full(np.delete(samples.shape, axis), np.inf)
    return samples.std(axis=axis, ddof=1) / np.sqrt(n)


@dataclass
class ExpectedUtilityOracle:
    """U(a, x): a set utility marginalized over an outcome model."""

    utility: UtilityFunction
    outcomes: OutcomeModel | None = None
    cache: bool = True
    _tables: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def additive(self) -> bool:
        """True when U(a) is a function of column sums of plug-in outcomes."""
        return isinstance(self.utility, (LogLinear, Linear)) and isinstance(
            self.outcomes, (DeterministicTable, LinearPredictor)
        )

    def plugin_outcomes(self, x: Population) -> np.ndarray:
        if not isinstance(self.outcomes, (DeterministicTable, LinearPredictor)):
            raise ModelError("plug-in outcomes need a deterministic or linear outcome model")
        return self.outcomes.predict(x)

    def values(self, A: np.ndarray, x: Population) -> np.ndarray:
        """U(a_k, x) for each row of the K x N selection matrix ``A``."""
        A = np.atleast_2d(np.asarray(A))
        if A.shape[1] != x.n:
            raise DimensionError(f"selections have length {A.shape[1]}, population has {x.n}")
        if isinstance(self.utility, Tabular):
            return self.utility.lookup(A)
        if isinstance(self.outcomes, DiscreteDistribution):
            return self._discrete_values(A, x)
        return _batch_set_utility(self.utility, A, self.plugin_outcomes(x))

    def _discrete_values(self, A: np.ndarray, x: Population) -> np.ndarray:
        dist = self.outcomes
        if dist.support.shape[1] != x.n:
            raise DimensionError(f"support is over {dist.support.shape[1]} candidates, population {x.n}")
        if not callable(dist.probs):
            p = dist.weights(A[0])
            return sum(p[k] * _batch_set_utility(self.utility, A, dist.support[k]) for k in range(len(p)))
        out = np.empty(A.shape[0])
        for r, a in enumerate(A):
            p = dist.weights(a)
            out[r] = sum(p[k] * _batch_set_utility(self.utility, a[None], dist.support[k])[0] for k in range(len(p)))
        return out

    def table(self, x: Population) -> np.ndarray:
        """U over all 2**N selections (N <= 20)."""
        check_capacity(x.n)
        key = id(x)
        hit = self._tables.get(key)
        if hit is not None and hit[0] is x:
            return hit[1]
        total = 1 << x.n
        out = np.empty(total)
        for start in range(0, total, _CHUNK):
            stop = min(total, start + _CHUNK)
            out[start:stop] = self.values(subset_bits(x.n, start, stop), x)
        out.setflags(write=False)
        if self.cache:
            self._tables = {key: (x, out)}
        return out

    def gains(self, A: np.ndarray, x: Population) -> np.ndarray:
        """Marginal gains U(a_k + i) - U(a_k) as a K x N matrix."""
        A = np.atleast_2d(np.asarray(A, dtype=np.uint8))
        if self.additive:
            y = self.plugin_outcomes(x)
            Af = A.astype(float)
            sums, counts = Af @ y, Af.sum(axis=1)
            base = self.utility.from_sums(sums, counts)
            add = (1.0 - Af)[:, :, None] * y[None, :, :]
            up = self.utility.from_sums(sums[:, None, :] + add, counts[:, None] + (1.0 - Af))
            return up - base[:, None]
        base = self.values(A, x)
        out = np.empty(A.shape, dtype=float)
        for i in range(x.n):
            Ai = A.copy()
            Ai[:, i] = 1
            out[:, i] = self.values(Ai, x) - base
        return out

    def swap_values(self, a: np.ndarray, x: Population) -> np.ndarray:
        """N x N matrix F with F[i, j] = U(a + i - j); the diagonal is NaN."""
        a = np.asarray(a, dtype=np.uint8)
        n = x.n
        if self.additive:
            y = self.plugin_outcomes(x)
            af = a.astype(float)
            s = af @ y
            cnt = af.sum()
            add = ((1.0 - af)[:, None] * y)[:, None, :]  # indexed by i
            rem = (af[:, None] * y)[None, :, :]  # indexed by j
            F = self.utility.from_sums(
                s + add - rem, cnt + (1.0 - af)[:, None] - af[None, :]
            )
        else:
            rows = []
            for i in range(n):
                for j in range(n):
                    rows.append(transform(a, [i], [j]) if i != j else a)
            F = self.values(np.array(rows), x).reshape(n, n)
        F = np.array(F, dtype=float)
        np.fill_diagonal(F, np.nan)
        return F


def expected_set_utility(o: ExpectedUtilityOracle, a, x: Population) -> float:
    """U(a, x): exact over a discrete outcome distribution, plug-in otherwise."""
    a = selection(a, x.n)
    return float(o.values(a[None, :], x)[0])


def _support(pi, x: Population):
    """(probabilities, masks) of the selections with positive probability."""
    probs = np.asarray(pi.set_probs())
    if probs.shape[0] != 1 << x.n:
        raise DimensionError(f"policy is over {int(np.log2(probs.shape[0]))} candidates, population {x.n}")
    nz = np.flatnonzero(probs)
    return probs[nz], nz.astype(np.int64)


def _masked_values(o: ExpectedUtilityOracle, masks: np.ndarray, x: Population) -> np.ndarray:
    if x.n <= MAX_EXACT_N:
        return o.table(x)[masks]
    A = ((masks[:, None] >> np.arange(x.n, dtype=np.int64)) & 1).astype(np.uint8)
    return o.values(A, x)


def estimate_policy_utility(o: ExpectedUtilityOracle, pi, x: Population, n: int, seed) -> Estimate:
    """Monte Carlo mean of U(a, x) over ``n`` selections drawn from ``pi``."""
    if n < 1:
        raise ArgumentError("sample count must be >= 1")
    A = pi.sample(seed, size=n)
    vals = o.values(A, x)
    return Estimate(float(vals.mean()), float(_stderr(vals)), n)


def policy_utility(o: ExpectedUtilityOracle, pi, x: Population, mode: str = "exact", n: int = 10_000, seed=0) -> float:
    """U(pi, x) = sum_a pi(a) U(a, x), exactly or by sampling."""
    if mode == "mc":
        return estimate_policy_utility(o, pi, x, n, seed).mean
    if mode != "exact":
        raise ArgumentError(f"unknown mode {mode!r}")
    if x.n > MAX_EXACT_N and not hasattr(pi, "probs"):
        raise CapacityError(f"exact policy utility needs N <= {MAX_EXACT_N} or a tabular policy")
    p, masks = _support(pi, x)
    return float(p @ _masked_values(o, masks, x))


def forced_policy_utility(
    o: ExpectedUtilityOracle,
    pi,
    x: Population,
    include: Sequence[int] = (),
    exclude: Sequence[int] = (),
) -> float:
    """sum_a pi(a) U((a + include) - exclude, x)."""
    inc, exc = set(include), set(exclude)
    if inc & exc:
        raise ArgumentError(f"candidates {sorted(inc & exc)} both included and excluded")
    if x.n > MAX_EXACT_N and not hasattr(pi, "probs"):
        raise CapacityError(f"exact forced utility needs N <= {MAX_EXACT_N} or a tabular policy")
    p, masks = _support(pi, x)
    inc_mask = sum(1 << i for i in inc)
    exc_mask = sum(1 << j for j in exc)
    moved = (masks | inc_mask) & ~np.int64(exc_mask)
    return float(p @ _masked_values(o, moved, x))
