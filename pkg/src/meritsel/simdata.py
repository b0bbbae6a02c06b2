"""Synthetic admissions data: applicants, course outcomes, a fitted outcome model
and a historical admission rule."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from types import MappingProxyType
from typing import Mapping

import numpy as np
from scipy.stats import truncnorm

from .core import LinearPredictor, Population
from .errors import ArgumentError, DimensionError
from .optimize import historical_topk
from .policies import _rng, sigmoid

FEATURES = ("age", "gender", "gpa", "science_points", "language_points", "other_points", "priority")
OUTCOMES = ("science_course", "language_course", "general_course")


def _default_loc():
    return {"age": 0.3, "gpa": 0.55, "science_points": 0.45, "language_points": 0.5, "other_points": 0.4, "priority": 0.5}


def _default_female_shift():
    return {"science_points": -0.08, "language_points": 0.08, "gpa": -0.05}


def _default_weights():
    # rows: outcome columns, columns: FEATURES
    return [
        [-0.1, 0.0, 0.7, 0.9, 0.0, 0.1, 0.1],
        [-0.1, 0.0, 0.7, 0.0, 0.9, 0.1, 0.1],
        [-0.1, 0.0, 0.8, 0.3, 0.3, 0.3, 0.1],
    ]


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the synthetic applicant pool.

    Numeric features are truncated normals on [0, 1] centred at ``loc``
    (shifted by ``female_shift`` for group F) with spread ``scale``.
    Outcomes are ``clip(W x + bias + outcome_shift[g] + noise, 0, 1)``.
    """

    n: int = 200
    seed: int = 0
    p_female: float = 0.5
    loc: Mapping[str, float] = field(default_factory=_default_loc)
    scale: float = 0.2
    female_shift: Mapping[str, float] = field(default_factory=_default_female_shift)
    weights: tuple = field(default_factory=_default_weights)
    bias: tuple = (-0.68, -0.68, -0.7)
    noise: float = 0.12
    outcome_shift_female: tuple = (-0.12, -0.02, -0.08)
    history_pool: int = 12_500
    history_admitted: int = 5_000
    history_noise: float = 0.25

    def __post_init__(self):
        if self.n < 1:
            raise ArgumentError("population size must be >= 1")
        if self.noise < 0 or self.scale <= 0 or self.history_noise < 0:
            raise ArgumentError("noise must be >= 0 and scale > 0")
        if not 0 <= self.p_female <= 1:
            raise ArgumentError("p_female must lie in [0, 1]")
        W = np.asarray(self.weights, dtype=float)
        if W.shape != (len(OUTCOMES), len(FEATURES)):
            raise DimensionError(f"weights must have shape {(len(OUTCOMES), len(FEATURES))}")
        if len(self.bias) != len(OUTCOMES) or len(self.outcome_shift_female) != len(OUTCOMES):
            raise DimensionError("bias and outcome_shift_female need one entry per outcome column")
        unknown = (set(self.loc) | set(self.female_shift)) - set(FEATURES)
        if unknown:
            raise ArgumentError(f"unknown features {sorted(unknown)}")
        if self.history_admitted > self.history_pool:
            raise ArgumentError("history_admitted exceeds history_pool")
        object.__setattr__(self, "loc", MappingProxyType({**_default_loc(), **dict(self.loc)}))
        object.__setattr__(self, "female_shift", MappingProxyType(dict(self.female_shift)))
        object.__setattr__(self, "weights", tuple(map(tuple, W.tolist())))
        object.__setattr__(self, "bias", tuple(float(b) for b in self.bias))
        object.__setattr__(self, "outcome_shift_female", tuple(float(b) for b in self.outcome_shift_female))

    @property
    def W(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def feature_loc(self, name: str, female: bool) -> float:
        return self.loc[name] + (self.female_shift.get(name, 0.0) if female else 0.0)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["loc"], d["female_shift"] = dict(self.loc), dict(self.female_shift)
        d["weights"] = [list(r) for r in self.weights]
        d["bias"], d["outcome_shift_female"] = list(self.bias), list(self.outcome_shift_female)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "GeneratorConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ArgumentError(f"unknown generator settings {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class GradeScale:
    """Letter grades and their numeric values."""

    mapping: Mapping[str, float] = field(
        default_factory=lambda: {"A": 1.0, "B": 0.8, "C": 0.6, "D": 0.4, "E": 0.2, "F": 0.0}
    )

    def __post_init__(self):
        if dict(self.mapping) != {"A": 1.0, "B": 0.8, "C": 0.6, "D": 0.4, "E": 0.2, "F": 0.0}:
            raise ArgumentError("grade scale must be A=1, B=0.8, C=0.6, D=0.4, E=0.2, F=0")
        object.__setattr__(self, "mapping", MappingProxyType(dict(self.mapping)))

    def numeric(self, letters) -> np.ndarray:
        try:
            return np.vectorize(self.mapping.__getitem__, otypes=[float])(np.asarray(letters))
        except KeyError as exc:
            raise ArgumentError(f"unknown grade {exc.args[0]!r}") from None

    def letters(self, y) -> np.ndarray:
        """Nearest letter grade for each value in [0, 1]."""
        keys = np.array(list(self.mapping))
        vals = np.array(list(self.mapping.values()))
        y = np.asarray(y, dtype=float)
        return keys[np.abs(y[..., None] - vals).argmin(axis=-1)]


def _truncated(rng, loc: np.ndarray, scale: float) -> np.ndarray:
    a, b = (0.0 - loc) / scale, (1.0 - loc) / scale
    return truncnorm.rvs(a, b, loc=loc, scale=scale, random_state=rng)


def generate_population(cfg: GeneratorConfig | None = None, seed=None, n: int | None = None) -> Population:
    """Applicants with features in [0, 1] and a binary gender label (M/F)."""
    cfg = cfg or GeneratorConfig()
    n = cfg.n if n is None else n
    if n < 1:
        raise ArgumentError("population size must be >= 1")
    rng = _rng(cfg.seed if seed is None else seed)
    female = rng.random(n) < cfg.p_female
    cols = []
    for name in FEATURES:
        if name == "gender":
            cols.append(female.astype(float))
            continue
        loc = np.where(female, cfg.feature_loc(name, True), cfg.feature_loc(name, False))
        cols.append(_truncated(rng, loc, cfg.scale))
    X = np.column_stack(cols)
    return Population(X, {"gender": np.where(female, "F", "M")}, feature_names=FEATURES)


def true_means(pop: Population, cfg: GeneratorConfig | None = None) -> np.ndarray:
    """Noise-free outcome means W x + bias + group shift (before clipping)."""
    cfg = cfg or GeneratorConfig()
    if pop.d != len(FEATURES):
        raise DimensionError(f"expected {len(FEATURES)} features, got {pop.d}")
    female = pop.labels("gender") == "F"
    shift = np.outer(female, cfg.outcome_shift_female)
    return pop.features @ cfg.W.T + np.asarray(cfg.bias) + shift


def generate_true_outcomes(pop: Population, cfg: GeneratorConfig | None = None, seed=None) -> np.ndarray:
    """Realized course results, N x 3 in [0, 1]."""
    cfg = cfg or GeneratorConfig()
    rng = _rng(cfg.seed + 1 if seed is None else seed)
    mu = true_means(pop, cfg)
    return np.clip(mu + cfg.noise * rng.standard_normal(mu.shape), 0.0, 1.0)


def fit_outcome_model(history: tuple[Population, np.ndarray], ridge: float = 1e-8) -> LinearPredictor:
    """Least-squares fit of each outcome column on the features plus intercept.

    Falls back to a ridge solution (flagged in ``meta``) when the design
    matrix is rank-deficient.
    """
    x, y = history
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != x.n:
        raise DimensionError(f"{y.shape[0]} outcome rows for {x.n} candidates")
    if x.n < x.d + 1:
        raise ArgumentError(f"need at least {x.d + 1} rows to fit {x.d} features")
    D = np.column_stack([x.features, np.ones(x.n)])
    rank = np.linalg.matrix_rank(D)
    used_ridge = bool(rank < D.shape[1])
    if used_ridge:
        beta = np.linalg.solve(D.T @ D + ridge * np.eye(D.shape[1]), D.T @ y)
    else:
        beta = np.linalg.lstsq(D, y, rcond=None)[0]
    resid = y - D @ beta
    meta = {
        "features": list(x.feature_names),
        "n_train": x.n,
        "rank": int(rank),
        "ridge_penalty": ridge if used_ridge else 0.0,
        "residual_rms": np.sqrt((resid**2).mean(axis=0)).tolist(),
    }
    return LinearPredictor(beta[:-1], beta[-1], used_ridge, meta)


HISTORICAL_WEIGHTS = {"gpa": 6.0, "priority": 2.0, "science_points": 1.5, "language_points": 1.5, "other_points": 0.5}


def historical_scores(pop: Population, seed=0, noise: float = 0.25) -> np.ndarray:
    """Admission probabilities of a logistic rule emphasizing gpa and priority."""
    if noise < 0:
        raise ArgumentError("noise must be >= 0")
    rng = _rng(seed)
    w = np.array([HISTORICAL_WEIGHTS.get(f, 0.0) for f in pop.feature_names])
    z = pop.features @ w - w.sum() / 2
    return sigmoid(z + noise * rng.standard_normal(pop.n))


def historical_admission(pop: Population, k: int, seed=0, noise: float = 0.25) -> np.ndarray:
    """Top-k applicants by historical admission score."""
    if not 0 <= k <= pop.n:
        raise ArgumentError(f"k = {k} outside [0, {pop.n}]")
    return historical_topk(historical_scores(pop, seed, noise), k)


def generate_history(cfg: GeneratorConfig | None = None, seed=None, admitted_only: bool = True):
    """Past cohort: (population, realized outcomes) used to fit the outcome model.

    By default only the top ``history_admitted`` of ``history_pool``
    applicants (by historical score) are kept, since outcomes are only
    observed for admitted students.
    """
    cfg = cfg or GeneratorConfig()
    seed = cfg.seed if seed is None else seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_pop, s_out, s_adm = (np.random.default_rng(s) for s in ss.spawn(3))
    pool = generate_population(cfg, s_pop, n=cfg.history_pool)
    y = generate_true_outcomes(pool, cfg, s_out)
    if not admitted_only:
        return pool, y
    a = historical_admission(pool, cfg.history_admitted, s_adm, cfg.history_noise).astype(bool)
    sub = Population(pool.features[a], {"gender": pool.labels("gender")[a]}, feature_names=pool.feature_names)
    return sub, y[a]


__all__ = [
    "FEATURES",
    "OUTCOMES",
    "GeneratorConfig",
    "GradeScale",
    "fit_outcome_model",
    "generate_history",
    "generate_population",
    "generate_true_outcomes",
    "historical_admission",
    "historical_scores",
    "true_means",
]
