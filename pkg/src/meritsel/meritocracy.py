"""Swap/local stability audits and deviation-from-meritocracy measures.

Forced utilities follow the usual shorthand: U(pi + i - j) is the policy
average of U after forcing i into and j out of every selection.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import MAX_EXACT_N, ExpectedUtilityOracle, Population, _support, check_capacity
from .errors import ArgumentError

DEFAULT_TOL = 1e-8
DEFAULT_AUDIT_SAMPLES = 200


@dataclass
class _PairStats:
    marg: np.ndarray
    forced: np.ndarray  # forced[i, j] = U(pi + i - j)
    swap_gap: np.ndarray  # U(pi - i + j) - U(pi + i - j)
    emc: np.ndarray
    swap_gap_se: np.ndarray | None = None
    emc_se: np.ndarray | None = None
    method: str = "exact"


def _policy_marginals(pi, x: Population) -> np.ndarray:
    if hasattr(pi, "marginals"):
        return np.asarray(pi.marginals(), dtype=float)
    raise ArgumentError(f"{type(pi).__name__} has no marginal selection probabilities")


def _exact_stats(o: ExpectedUtilityOracle, pi, x: Population) -> _PairStats:
    check_capacity(x.n, "exact audits")
    p, masks = _support(pi, x)
    T = o.table(x)
    n = x.n
    base = p @ T[masks]
    forced = np.full((n, n), np.nan)
    emc = np.empty(n)
    for i in range(n):
        mi = masks | (1 << i)
        emc[i] = p @ T[mi] - base
        for j in range(n):
            if j != i:
                forced[i, j] = p @ T[mi & ~np.int64(1 << j)]
    return _PairStats(_policy_marginals(pi, x), forced, forced.T - forced, emc)


def _mc_stats(o: ExpectedUtilityOracle, pi, x: Population, n_samples: int, seed) -> _PairStats:
    if n_samples < 2:
        raise ArgumentError("Monte Carlo audits need at least 2 samples")
    A = pi.sample(seed, size=n_samples)
    n = x.n
    f_sum = np.zeros((n, n))
    d_sum = np.zeros((n, n))
    d_sq = np.zeros((n, n))
    for a in A:
        F = o.swap_values(a, x)
        D = F.T - F
        f_sum += F
        d_sum += D
        d_sq += D * D
    k = float(n_samples)
    d_mean = d_sum / k
    d_var = np.maximum(d_sq / k - d_mean**2, 0.0) * k / (k - 1)
    g = o.gains(A, x)
    return _PairStats(
        _policy_marginals(pi, x),
        f_sum / k,
        d_mean,
        g.mean(axis=0),
        np.sqrt(d_var / k),
        g.std(axis=0, ddof=1) / np.sqrt(k),
        "mc",
    )


def _stats(o, pi, x, method="auto", n_samples=DEFAULT_AUDIT_SAMPLES, seed=0) -> _PairStats:
    if method == "auto":
        method = "exact" if x.n <= MAX_EXACT_N else "mc"
    if method == "exact":
        return _exact_stats(o, pi, x)
    if method == "mc":
        return _mc_stats(o, pi, x, n_samples, seed)
    raise ArgumentError(f"unknown audit method {method!r}")


def _swap_terms(s: _PairStats, tol: float):
    w = s.marg[:, None] - s.marg[None, :]
    gap = np.nan_to_num(s.swap_gap, nan=0.0)
    active = (w > tol) & (gap > tol)
    np.fill_diagonal(active, False)
    return w, gap, active


def _swap_witnesses(s: _PairStats, tol: float) -> list[tuple[int, int, float]]:
    _, gap, active = _swap_terms(s, tol)
    return [(int(i), int(j), float(-gap[i, j])) for i, j in zip(*np.nonzero(active))]


def _dev_swap(s: _PairStats, tol: float) -> tuple[float, float | None]:
    w, gap, active = _swap_terms(s, tol)
    val = float((w * gap)[active].sum())
    if s.swap_gap_se is None:
        return val, None
    return val, float(np.sqrt(((w * s.swap_gap_se) ** 2)[active].sum()))


def _dev_local(s: _PairStats, tol: float) -> tuple[float, float | None]:
    active = s.emc > tol
    val = float(s.emc[active].sum())
    if s.emc_se is None:
        return val, None
    return val, float(np.sqrt((s.emc_se[active] ** 2).sum()))


def check_swap_stability(o: ExpectedUtilityOracle, pi, x: Population, tol: float = DEFAULT_TOL):
    """(stable, witnesses) where witnesses are (i, j, gap) with gap < 0.

    A pair violates when pi(a_i=1) > pi(a_j=1) + tol but
    U(pi + i - j) < U(pi - i + j) - tol; ``gap`` is the difference
    U(pi + i - j) - U(pi - i + j).
    """
    wit = _swap_witnesses(_exact_stats(o, pi, x), tol)
    return not wit, wit


def check_local_stability(o: ExpectedUtilityOracle, pi, x: Population, tol: float = DEFAULT_TOL):
    """(stable, witnesses) where witnesses are (i, emc_i) with emc_i > tol."""
    s = _exact_stats(o, pi, x)
    wit = [(int(i), float(s.emc[i])) for i in np.flatnonzero(s.emc > tol)]
    return not wit, wit


def dev_swap(o: ExpectedUtilityOracle, pi, x: Population, tol: float = 0.0) -> float:
    """sum_{i,j} (pi_i - pi_j)^+ (U(pi - i + j) - U(pi + i - j))^+ over ordered pairs."""
    return _dev_swap(_exact_stats(o, pi, x), tol)[0]


def dev_local(o: ExpectedUtilityOracle, pi, x: Population, tol: float = 0.0) -> float:
    """Sum of positive expected marginal contributions."""
    return _dev_local(_exact_stats(o, pi, x), tol)[0]


@dataclass
class AuditReport:
    swap_stable: bool | None
    local_stable: bool | None
    meritocratic: bool | None
    swap_witnesses: list = field(default_factory=list)
    local_witnesses: list = field(default_factory=list)
    dev_swap: float = 0.0
    dev_local: float = 0.0
    tolerance: float = DEFAULT_TOL
    method: str = "exact"
    dev_swap_se: float | None = None
    dev_local_se: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    CSV_FIELDS = ("policy_id", "utility", "dev_swap", "dev_local", "swap_stable", "local_stable")

    def csv_row(self, policy_id: str, utility: float | None = None) -> dict:
        return {
            "policy_id": policy_id,
            "utility": "" if utility is None else repr(float(utility)),
            "dev_swap": repr(self.dev_swap),
            "dev_local": repr(self.dev_local),
            "swap_stable": "" if self.swap_stable is None else str(self.swap_stable).lower(),
            "local_stable": "" if self.local_stable is None else str(self.local_stable).lower(),
        }

    def to_csv(self, policy_id: str, utility: float | None = None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerow(self.csv_row(policy_id, utility))
        return buf.getvalue()


def audit(
    o: ExpectedUtilityOracle,
    pi,
    x: Population,
    tol: float = DEFAULT_TOL,
    method: str = "auto",
    n_samples: int = DEFAULT_AUDIT_SAMPLES,
    seed=0,
) -> AuditReport:
    """Run both stability checks and both deviation measures.

    With ``method="mc"`` (the default beyond N = 20) the forced utilities are
    sampled, deviations carry standard errors and the boolean verdicts are
    left as ``None``.
    """
    s = _stats(o, pi, x, method, n_samples, seed)
    ds, ds_se = _dev_swap(s, tol)
    dl, dl_se = _dev_local(s, tol)
    sw = _swap_witnesses(s, tol)
    lw = [(int(i), float(s.emc[i])) for i in np.flatnonzero(s.emc > tol)]
    if s.method == "mc":
        return AuditReport(None, None, None, sw, lw, ds, dl, tol, "mc", ds_se, dl_se)
    return AuditReport(not sw, not lw, not sw and not lw, sw, lw, ds, dl, tol, "exact")
