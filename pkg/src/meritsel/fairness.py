"""epsilon-statistical parity between two groups."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import Population, selection
from .errors import ArgumentError, DimensionError
from .policies import LogisticThresholdPolicy, SeparableLinearPolicy, SoftmaxPolicy, marginals

PARITY_SLACK = 1e-12


@dataclass(frozen=True)
class GroupAffiliation:
    """Indicator vectors of a bipartition into groups A (``M``) and B (``F``)."""

    M: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float).ravel()
        F = np.asarray(self.F, dtype=float).ravel()
        if M.shape != F.shape:
            raise DimensionError("affiliation vectors differ in length")
        if not np.all((M == 0) | (M == 1)) or not np.all(M + F == 1):
            raise ArgumentError("affiliation vectors must form a bipartition")
        if M.sum() < 1 or F.sum() < 1:
            raise ArgumentError("both groups need at least one member")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "F", F)

    @property
    def n(self) -> int:
        return len(self.M)

    @property
    def direction(self) -> np.ndarray:
        """M/|M| - F/|F|: the gradient of rate_M - rate_F w.r.t. marginals."""
        return self.M / self.M.sum() - self.F / self.F.sum()

    def rate_gap(self, p: np.ndarray) -> float:
        p = np.asarray(p, dtype=float)
        if p.shape != self.M.shape:
            raise DimensionError(f"{len(p)} marginals for {self.n} candidates")
        return float(self.direction @ p)

    @classmethod
    def from_labels(cls, labels, group_a=None) -> "GroupAffiliation":
        labels = np.asarray(labels).astype(str)
        values = sorted(set(labels))
        if group_a is None:
            if len(values) != 2:
                raise ArgumentError(f"need exactly two group labels, got {values}")
            group_a = values[0]
        M = (labels == str(group_a)).astype(float)
        return cls(M, 1.0 - M)

    @classmethod
    def from_population(cls, x: Population, group_attr: str = "gender", group_a=None) -> "GroupAffiliation":
        return cls.from_labels(x.labels(group_attr), group_a)


@dataclass(frozen=True)
class ParityConstraint:
    epsilon: float
    groups: GroupAffiliation

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ArgumentError("epsilon must lie in [0, 1]")


def load_constraint(path_or_dict, x: Population) -> ParityConstraint:
    """Read ``{"epsilon": 0.1, "group_attr": "gender"}``."""
    d = path_or_dict
    if not isinstance(d, dict):
        with open(d) as fh:
            d = json.load(fh)
    attr = d.get("group_attr", "gender")
    if attr not in x.groups and len(x.groups) == 1:
        attr = next(iter(x.groups))
    return ParityConstraint(float(d.get("epsilon", 0.1)), GroupAffiliation.from_population(x, attr, d.get("group_a")))


def _check_n(pi, g: GroupAffiliation) -> np.ndarray:
    p = marginals(pi)
    if p.shape[0] != g.n:
        raise DimensionError(f"policy has {p.shape[0]} candidates, groups {g.n}")
    return p


def parity_gap(pi, g: GroupAffiliation) -> float:
    """|rate_M - rate_F| of marginal selection probabilities."""
    return abs(g.rate_gap(_check_n(pi, g)))


def parity_penalty(pi, c: ParityConstraint, mode: str = "lagrangian") -> float:
    """(rate_M - rate_F)**2, minus epsilon in ``"lagrangian"`` mode."""
    sq = parity_gap(pi, c.groups) ** 2
    if mode == "lagrangian":
        return sq - c.epsilon
    if mode == "penalty":
        return sq
    raise ArgumentError(f"unknown penalty mode {mode!r}")


def parity_penalty_gradient(pi, c: ParityConstraint) -> np.ndarray:
    """Gradient of the penalty w.r.t. the marginal selection probabilities.

    2 (rate_M - rate_F) (M/|M| - F/|F|); epsilon is a constant and drops out.
    """
    p = _check_n(pi, c.groups)
    return 2.0 * c.groups.rate_gap(p) * c.groups.direction


def marginal_jacobian(pi) -> np.ndarray:
    """d marginals / d theta as an N x dim(theta) matrix."""
    if isinstance(pi, SeparableLinearPolicy):
        return np.eye(len(pi.theta))
    if isinstance(pi, LogisticThresholdPolicy):
        s = pi.marginals()
        return (s * (1.0 - s))[:, None] * pi.features
    if isinstance(pi, SoftmaxPolicy):
        # the linear softmax over sets factorizes into independent logistic choices
        s = pi.marginals()
        return np.diag(pi.beta * s * (1.0 - s))
    raise ArgumentError(f"no parameter gradient for {type(pi).__name__}")


def parity_penalty_gradient_theta(pi, c: ParityConstraint) -> np.ndarray:
    """Penalty gradient chained through the policy family's parameters."""
    return marginal_jacobian(pi).T @ parity_penalty_gradient(pi, c)


def set_satisfies_parity(a, c: ParityConstraint) -> bool:
    """Check |frac_M - frac_F| <= epsilon on a fixed selection's group fractions."""
    a = selection(a, c.groups.n).astype(float)
    return abs(c.groups.rate_gap(a)) <= c.epsilon + PARITY_SLACK
