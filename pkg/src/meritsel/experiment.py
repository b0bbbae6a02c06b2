"""Constrained-vs-unconstrained comparison of selection algorithms on synthetic admissions."""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

import numpy as np

from .core import DeterministicTable, ExpectedUtilityOracle, LogLinear, Population, policy_utility
from .errors import ArgumentError, CapacityError, DivergenceError, MeritselError
from .fairness import GroupAffiliation, ParityConstraint
from .meritocracy import audit
from .optimize import (
    OptimizerConfig,
    constrained_policy_gradient,
    parity_topk,
    policy_gradient,
    historical_topk,
    stochastic_greedy,
)
from .policies import LogisticThresholdPolicy, SeparableLinearPolicy, deterministic_policy, uniform_policy
from .simdata import (
    FEATURES,
    GeneratorConfig,
    fit_outcome_model,
    generate_history,
    generate_population,
    generate_true_outcomes,
    historical_scores,
)

ALGORITHMS = ("separable_linear", "threshold", "greedy", "uniform", "historical")
THRESHOLD_FEATURES = FEATURES
SUMMARY_FIELDS = (
    "algorithm",
    "constrained",
    "outcome_basis",
    "utility_mean",
    "utility_std",
    "dev_swap_mean",
    "dev_swap_std",
    "dev_local_mean",
    "dev_local_std",
)
RUN_FIELDS = (
    "algorithm",
    "constrained",
    "repeat",
    "seed",
    "outcome_basis",
    "utility",
    "dev_swap",
    "dev_swap_se",
    "dev_local",
    "dev_local_se",
    "parity_gap",
    "selected",
    "error",
)


@dataclass(frozen=True)
class ExperimentConfig:
    n_applicants: int = 200
    cost: float = 0.05
    epsilon: float = 0.1
    repeats: int = 5
    algorithms: tuple = ALGORITHMS
    constrained: tuple = (False, True)
    seeds: tuple | None = None
    base_seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(eta0=1.0))
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    eval_samples: int = 2000
    audit_samples: int = 200
    audit_method: str = "auto"
    threshold_features: tuple = THRESHOLD_FEATURES
    greedy_subsample: int | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if self.repeats < 1:
            raise ArgumentError("repeats must be >= 1")
        if self.n_applicants < 1:
            raise ArgumentError("n_applicants must be >= 1")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ArgumentError(f"unknown algorithms {sorted(unknown)}")
        if self.seeds is not None and len(self.seeds) != self.repeats:
            raise ArgumentError("need one seed per repeat")
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        object.__setattr__(self, "constrained", tuple(bool(c) for c in self.constrained))

    @property
    def seed_list(self) -> list[int]:
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        return [self.base_seed + 1000 * r for r in range(self.repeats)]

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ArgumentError(f"unknown experiment settings {sorted(unknown)}")
        if "optimizer" in d:
            d["optimizer"] = OptimizerConfig.from_dict(d["optimizer"])
        if "generator" in d:
            d["generator"] = GeneratorConfig.from_dict(d["generator"])
        for key in ("algorithms", "constrained", "seeds", "threshold_features"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator"] = self.generator.to_dict()
        return d


def small_preset(**overrides) -> ExperimentConfig:
    """Reduced instance (N = 12) whose audits are exact."""
    base = dict(
        n_applicants=12,
        cost=0.05,
        generator=GeneratorConfig(n=12),
        audit_method="exact",
        optimizer=OptimizerConfig(estimator="exact"),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@dataclass
class RepeatData:
    """Everything one repeat needs, drawn from a single seed."""

    seed: int
    population: Population
    y_true: np.ndarray
    oracles: dict
    groups: GroupAffiliation
    hist_scores: np.ndarray


def prepare_repeat(cfg: ExperimentConfig, seed: int) -> RepeatData:
    ss = np.random.SeedSequence(seed)
    s_hist, s_pop, s_out, s_score = ss.spawn(4)
    gen = replace(cfg.generator, n=cfg.n_applicants)
    history = generate_history(gen, s_hist)
    model = fit_outcome_model(history)
    pop = generate_population(gen, np.random.default_rng(s_pop))
    y_true = generate_true_outcomes(pop, gen, np.random.default_rng(s_out))
    u = LogLinear(cfg.cost)
    oracles = {
        "predicted": ExpectedUtilityOracle(u, model),
        "true": ExpectedUtilityOracle(u, DeterministicTable(y_true)),
    }
    groups = GroupAffiliation.from_population(pop, "gender", "M")
    scores = historical_scores(pop, np.random.default_rng(s_score), gen.history_noise)
    return RepeatData(seed, pop, y_true, oracles, groups, scores)


def threshold_features(pop: Population, names=THRESHOLD_FEATURES) -> np.ndarray:
    """Standardized feature columns plus a constant column.

    With the constant column the policy class is the same as on raw
    features; standardizing only improves the conditioning of the ascent.
    """
    cols = np.column_stack([pop.column(f) for f in names])
    sd = cols.std(axis=0)
    cols = (cols - cols.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    return np.column_stack([cols, np.ones(pop.n)])


def run_algorithm(cfg: ExperimentConfig, data: RepeatData, algorithm: str, constrained: bool, greedy_size: int | None):
    """Train or select with ``algorithm``; returns (policy, extra info)."""
    o = data.oracles["predicted"]
    x = data.population
    c = ParityConstraint(cfg.epsilon, data.groups)
    ocfg = replace(cfg.optimizer, seed=data.seed)
    if algorithm == "uniform":
        return uniform_policy(x.n), {}
    if algorithm == "separable_linear":
        pi0 = SeparableLinearPolicy(np.full(x.n, 0.5))
    elif algorithm == "threshold":
        X = threshold_features(x, cfg.threshold_features)
        pi0 = LogisticThresholdPolicy(np.zeros(X.shape[1]), X)
    elif algorithm == "greedy":
        a = stochastic_greedy(o, x, cfg.greedy_subsample, data.seed, c if constrained else None)
        return deterministic_policy(a), {"selected": int(a.sum())}
    elif algorithm == "historical":
        k = greedy_size if greedy_size is not None else int(round(x.n / 4))
        a = parity_topk(data.hist_scores, k, c) if constrained else historical_topk(data.hist_scores, k)
        return deterministic_policy(a), {"selected": int(a.sum())}
    else:
        raise ArgumentError(f"unknown algorithm {algorithm!r}")
    if constrained:
        pi, trace = constrained_policy_gradient(o, pi0, x, c, ocfg)
    else:
        pi, trace = policy_gradient(o, pi0, x, ocfg)
    return pi, {"trace": trace}


def evaluate(cfg: ExperimentConfig, data: RepeatData, pi, basis: str) -> dict:
    o = data.oracles[basis]
    x = data.population
    method = cfg.audit_method
    if method == "auto":
        method = "exact" if x.n <= 16 else "mc"
    if method == "exact":
        util = policy_utility(o, pi, x, "exact")
    else:
        util = policy_utility(o, pi, x, "mc", cfg.eval_samples, data.seed + 17)
    rep = audit(o, pi, x, method=method, n_samples=cfg.audit_samples, seed=data.seed + 23)
    return {
        "utility": util,
        "dev_swap": rep.dev_swap,
        "dev_swap_se": rep.dev_swap_se,
        "dev_local": rep.dev_local,
        "dev_local_se": rep.dev_local_se,
    }


def run_repeat(cfg: ExperimentConfig, r: int, seed: int) -> list[dict]:
    data = prepare_repeat(cfg, seed)
    rows = []
    for constrained in cfg.constrained:
        greedy_size = None
        order = sorted(cfg.algorithms, key=lambda a: a != "greedy")  # greedy fixes k for historical
        for alg in order:
            base = {"algorithm": alg, "constrained": constrained, "repeat": r, "seed": seed}
            try:
                pi, info = run_algorithm(cfg, data, alg, constrained, greedy_size)
            except (MeritselError, FloatingPointError) as exc:
                for basis in ("predicted", "true"):
                    rows.append({**base, "outcome_basis": basis, "error": f"{type(exc).__name__}: {exc}"})
                if isinstance(exc, (CapacityError, DivergenceError)) and len(cfg.algorithms) == 1:
                    raise
                continue
            if alg == "greedy":
                greedy_size = info["selected"]
            gap = abs(data.groups.rate_gap(np.asarray(pi.marginals())))
            for basis in ("predicted", "true"):
                rows.append({
                    **base,
                    "outcome_basis": basis,
                    **evaluate(cfg, data, pi, basis),
                    "parity_gap": gap,
                    "selected": float(np.sum(pi.marginals())),
                    "error": "",
                })
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    groups: dict = {}
    for row in rows:
        if row.get("error"):
            continue
        key = (row["algorithm"], row["constrained"], row["outcome_basis"])
        groups.setdefault(key, []).append(row)
    out = []
    for (alg, con, basis), rs in groups.items():
        rec = {"algorithm": alg, "constrained": con, "outcome_basis": basis}
        for metric in ("utility", "dev_swap", "dev_local"):
            v = np.array([r[metric] for r in rs], dtype=float)
            rec[f"{metric}_mean"] = float(v.mean())
            rec[f"{metric}_std"] = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        out.append(rec)
    order = {a: k for k, a in enumerate(ALGORITHMS)}
    out.sort(key=lambda r: (r["constrained"], r["outcome_basis"] != "predicted", order[r["algorithm"]]))
    return out


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_csv(path, rows: list[dict], fields) -> None:
    """Write atomically: a temp file in the same directory, then rename."""
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in fields})
    os.replace(tmp, path)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> tuple[list[dict], list[dict]]:
    """Run every repeat; returns (summary rows, per-run rows) and writes CSVs if ``out_dir``."""
    out_dir = out_dir or cfg.out_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    rows = []
    for r, seed in enumerate(cfg.seed_list):
        rep_rows = run_repeat(cfg, r, seed)
        if out_dir:
            write_csv(os.path.join(out_dir, f"run_{r}.csv"), rep_rows, RUN_FIELDS)
        rows.extend(rep_rows)
    summary = summarize(rows)
    if out_dir:
        write_csv(os.path.join(out_dir, "summary.csv"), summary, SUMMARY_FIELDS)
    return summary, rows
