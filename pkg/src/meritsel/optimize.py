"""Policy gradients, the (constrained) policy-gradient loop and baseline selectors."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .contribution import emc_exact, emc_mc
from .core import (
    ExpectedUtilityOracle,
    Population,
    _support,
    check_capacity,
    estimate_policy_utility,
    policy_utility,
)
from .errors import ArgumentError, CapacityError, DivergenceError
from .fairness import (
    ParityConstraint,
    parity_gap,
    parity_penalty,
    parity_penalty_gradient_theta,
    set_satisfies_parity,
)
from .policies import (
    LogisticThresholdPolicy,
    SeparableLinearPolicy,
    SoftmaxPolicy,
    _rng,
    uniform_policy,
)

MAX_EXACT_GRAD_N = 16
FEASIBILITY_SLACK = 0.02


@dataclass(frozen=True)
class OptimizerConfig:
    """Step-size schedule, stopping rule and estimator settings.

    ``multiplier`` picks the dual update of the constrained loop:
    ``"conventional"`` keeps lambda >= 0 and ascends on the violation
    gap**2 - epsilon**2; ``"literal"`` keeps lambda <= 0 and applies
    lambda <- lambda - eta (gap**2 - epsilon).
    """

    max_iters: int = 250
    delta: float = 1e-6
    eta0: float = 0.1
    eta_decay: float = 0.9
    stall_window: int = 10
    mc_samples: int = 40
    seed: int = 0
    lambda0: float = 0.0
    lambda_lr: float = 50.0
    multiplier: str = "conventional"
    clamp: float = 1e-3
    estimator: str = "auto"
    eval_samples: int = 200
    baseline: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ArgumentError("max_iters must be >= 1")
        if self.eta0 < 0:
            raise ArgumentError("eta0 must be nonnegative")
        if not 0 < self.eta_decay < 1:
            raise ArgumentError("eta_decay must lie in (0, 1)")
        if self.stall_window < 1 or self.mc_samples < 1 or self.eval_samples < 1:
            raise ArgumentError("stall_window, mc_samples and eval_samples must be >= 1")
        if not 0 <= self.clamp < 0.5:
            raise ArgumentError("clamp must lie in [0, 0.5)")
        if self.estimator not in ("auto", "exact", "mc"):
            raise ArgumentError(f"unknown estimator {self.estimator!r}")
        if self.multiplier not in ("conventional", "literal"):
            raise ArgumentError(f"unknown multiplier mode {self.multiplier!r}")

    def exact_for(self, n: int) -> bool:
        if self.estimator == "auto":
            return n <= MAX_EXACT_GRAD_N
        return self.estimator == "exact"

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ArgumentError(f"unknown optimizer settings {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    utility: float
    penalty: float
    lam: float
    eta: float
    theta_delta: float


@dataclass
class TrainTrace:
    family: str
    records: list[TraceRecord] = field(default_factory=list)
    converged: bool = False
    infeasible: bool = False
    returned_iter: int | None = None

    def __len__(self):
        return len(self.records)

    @property
    def utilities(self) -> np.ndarray:
        return np.array([r.utility for r in self.records])

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([r.lam for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "utility", "penalty", "lambda", "eta", "theta_delta"])
            for r in self.records:
                w.writerow([r.iter, repr(r.utility), repr(r.penalty), repr(r.lam), repr(r.eta), repr(r.theta_delta)])


# ---------------------------------------------------------------------------
# analytic gradients


def _as_separable(theta) -> SeparableLinearPolicy:
    return theta if isinstance(theta, SeparableLinearPolicy) else SeparableLinearPolicy(theta)


def grad_separable_linear(
    o: ExpectedUtilityOracle, theta, x: Population, mode: str = "exact", n: int = 40, seed=0, clamp: float = 1e-3
):
    """dU/dtheta_i = EMC_i / (1 - theta_i).

    Parameters above ``1 - clamp`` are pulled back to it first, so the
    division is always defined.
    """
    pi = _as_separable(theta)
    hi = 1.0 - max(clamp, 1e-12)
    if np.any(pi.theta > hi):
        pi = SeparableLinearPolicy(np.minimum(pi.theta, hi))
    emc = emc_exact(o, pi, x) if mode == "exact" else emc_mc(o, pi, x, n, seed)
    return emc.values / (1.0 - pi.theta)


def grad_softmax(o: ExpectedUtilityOracle, theta, beta: float, x: Population) -> np.ndarray:
    """dU/dtheta_i = beta * pi(a_i = 1) * EMC_i."""
    pi = theta if isinstance(theta, SoftmaxPolicy) else SoftmaxPolicy(theta, beta)
    check_capacity(pi.n, "softmax gradients")
    return pi.beta * pi.marginals() * emc_exact(o, pi, x).values


def grad_threshold(
    o: ExpectedUtilityOracle,
    theta,
    x: Population,
    n: int = 40,
    seed=0,
    mode: str = "mc",
    features: np.ndarray | None = None,
    baseline: bool = False,
) -> np.ndarray:
    """Score-function gradient sum_a pi(a) U(a) sum_j x_j (a_j - sigma_j).

    ``mode="exact"`` enumerates every selection (N <= 16); ``"mc"`` averages
    over ``n`` sampled selections.  With ``baseline=True`` the sampled
    estimator subtracts the leave-one-out mean utility from each U(a_k),
    which keeps it unbiased and cuts its variance.
    """
    if isinstance(theta, LogisticThresholdPolicy):
        pi = theta
    else:
        pi = LogisticThresholdPolicy(theta, x.features if features is None else features)
    s = pi.marginals()
    X = pi.features
    if mode == "exact":
        if x.n > MAX_EXACT_GRAD_N:
            raise CapacityError(f"exact threshold gradients need N <= {MAX_EXACT_GRAD_N}, got N = {x.n}")
        p, masks = _support(pi, x)
        A = ((masks[:, None] >> np.arange(x.n, dtype=np.int64)) & 1).astype(float)
        w = p * o.table(x)[masks]
        return X.T @ (A.T @ w - s * w.sum())
    if n < 1:
        raise ArgumentError("sample count must be >= 1")
    A = pi.sample(seed, size=n)
    u = o.values(A, x)
    if baseline and n > 1:
        u = u - (u.sum() - u) / (n - 1)
    return X.T @ ((A - s).T @ u) / n


# ---------------------------------------------------------------------------
# family adapters used by the training loops


@dataclass
class _Family:
    name: str
    theta: np.ndarray
    make: callable
    grad: callable
    project: callable


def _family(o: ExpectedUtilityOracle, pi0, x: Population, cfg: OptimizerConfig) -> _Family:
    exact = cfg.exact_for(x.n)
    if isinstance(pi0, SeparableLinearPolicy):
        lo, hi = cfg.clamp, 1.0 - cfg.clamp

        def grad(theta, rng):
            pi = SeparableLinearPolicy(theta)
            if exact:
                return grad_separable_linear(o, pi, x, "exact", clamp=cfg.clamp)
            return grad_separable_linear(o, pi, x, "mc", cfg.mc_samples, rng, clamp=cfg.clamp)

        return _Family("separable_linear", np.clip(pi0.theta, lo, hi), SeparableLinearPolicy, grad,
                       lambda t: np.clip(t, lo, hi))
    if isinstance(pi0, SoftmaxPolicy):
        beta = pi0.beta
        return _Family(
            "softmax",
            pi0.theta.copy(),
            lambda t: SoftmaxPolicy(t, beta),
            lambda t, rng: grad_softmax(o, t, beta, x),
            lambda t: t,
        )
    if isinstance(pi0, LogisticThresholdPolicy):
        X = pi0.features

        def grad(theta, rng):
            pi = LogisticThresholdPolicy(theta, X)
            if exact:
                return grad_threshold(o, pi, x, mode="exact")
            return grad_threshold(o, pi, x, cfg.mc_samples, rng, mode="mc", baseline=cfg.baseline)

        return _Family("threshold", pi0.theta.copy(), lambda t: LogisticThresholdPolicy(t, X), grad, lambda t: t)
    raise ArgumentError(f"policy gradient is not defined for {type(pi0).__name__}")


def _utility_estimate(o, pi, x, cfg: OptimizerConfig) -> float:
    if cfg.exact_for(x.n):
        return policy_utility(o, pi, x, "exact")
    # a fixed evaluation seed gives common random numbers across iterations
    return estimate_policy_utility(o, pi, x, cfg.eval_samples, cfg.seed + 7919).mean


class _StallSchedule:
    """Multiplies eta by ``decay`` after ``window`` iterations without a new best utility."""

    def __init__(self, cfg: OptimizerConfig):
        self.eta = cfg.eta0
        self.decay = cfg.eta_decay
        self.window = cfg.stall_window
        self.best = -math.inf
        self.since = 0

    def update(self, utility: float) -> None:
        if utility > self.best + 1e-12:
            self.best = utility
            self.since = 0
            return
        self.since += 1
        if self.since >= self.window:
            self.eta *= self.decay
            self.since = 0


def _check_finite(g: np.ndarray, trace: TrainTrace, it: int) -> None:
    if not np.all(np.isfinite(g)):
        raise DivergenceError(f"non-finite gradient at iteration {it}", trace)


def policy_gradient(o: ExpectedUtilityOracle, pi0, x: Population, cfg: OptimizerConfig | None = None):
    """Gradient ascent on U(pi_theta, x); returns ``(policy, trace)``."""
    cfg = cfg or OptimizerConfig()
    fam = _family(o, pi0, x, cfg)
    rng = _rng(cfg.seed)
    sched = _StallSchedule(cfg)
    trace = TrainTrace(fam.name)
    theta = fam.theta
    for it in range(cfg.max_iters):
        g = fam.grad(theta, rng)
        _check_finite(g, trace, it)
        new = fam.project(theta + sched.eta * g)
        step = float(np.linalg.norm(new - theta))
        theta = new
        u = _utility_estimate(o, fam.make(theta), x, cfg)
        trace.records.append(TraceRecord(it, u, 0.0, 0.0, sched.eta, step))
        sched.update(u)
        if step <= cfg.delta:
            trace.converged = True
            break
    trace.returned_iter = len(trace) - 1
    return fam.make(theta), trace


def constrained_policy_gradient(
    o: ExpectedUtilityOracle,
    pi0,
    x: Population,
    c: ParityConstraint,
    cfg: OptimizerConfig | None = None,
):
    """Primal-dual gradient ascent on U under epsilon-statistical parity.

    Returns ``(policy, trace)``.  If the last iterate violates the
    constraint by more than 0.02 the trace is flagged ``infeasible`` and
    the best feasible iterate seen (if any) is returned instead.
    """
    cfg = cfg or OptimizerConfig()
    literal = cfg.multiplier == "literal"
    if literal and cfg.lambda0 > 0:
        raise ArgumentError("literal multiplier mode needs lambda0 <= 0")
    if not literal and cfg.lambda0 < 0:
        raise ArgumentError("conventional multiplier mode needs lambda0 >= 0")
    fam = _family(o, pi0, x, cfg)
    rng = _rng(cfg.seed)
    sched = _StallSchedule(cfg)
    trace = TrainTrace(fam.name)
    theta, lam = fam.theta, float(cfg.lambda0)
    best = None  # (utility, theta, iter)
    for it in range(cfg.max_iters):
        pi = fam.make(theta)
        g = fam.grad(theta, rng) - lam * parity_penalty_gradient_theta(pi, c)
        _check_finite(g, trace, it)
        sq = parity_penalty(pi, c, "penalty")
        if literal:
            lam = min(0.0, lam - sched.eta * (sq - c.epsilon))
        else:
            lam = max(0.0, lam + cfg.lambda_lr * sched.eta * (sq - c.epsilon**2))
        new = fam.project(theta + sched.eta * g)
        step = float(np.linalg.norm(new - theta))
        theta = new
        pi = fam.make(theta)
        u = _utility_estimate(o, pi, x, cfg)
        pen = parity_penalty(pi, c, "lagrangian")
        trace.records.append(TraceRecord(it, u, pen, lam, sched.eta, step))
        if parity_gap(pi, c.groups) <= c.epsilon + FEASIBILITY_SLACK and (best is None or u > best[0]):
            best = (u, theta, it)
        sched.update(u)
        if step <= cfg.delta:
            trace.converged = True
            break
    trace.returned_iter = len(trace) - 1
    if parity_gap(fam.make(theta), c.groups) > c.epsilon + FEASIBILITY_SLACK:
        trace.infeasible = True
        if best is not None:
            theta, trace.returned_iter = best[1], best[2]
    return fam.make(theta), trace


def round_policy(pi) -> SeparableLinearPolicy:
    """Nearest deterministic policy: select i iff its marginal is >= 0.5."""
    return SeparableLinearPolicy((np.asarray(pi.marginals()) >= 0.5).astype(float))


# ---------------------------------------------------------------------------
# baselines


def default_subsample(n: int) -> int:
    return max(1, math.ceil(n / 5))


def stochastic_greedy(
    o: ExpectedUtilityOracle,
    x: Population,
    subsample_s: int | None = None,
    seed=0,
    constraint: ParityConstraint | None = None,
) -> np.ndarray:
    """Grow a selection by the best marginal gain within random subsamples.

    Each round draws ``subsample_s`` unselected candidates and adds the one
    with the largest gain (the lowest index on ties).  Zero-gain steps are
    taken (unless they lead into a parity violation), so plateaus such as
    empty-set ties can be crossed; the loop stops once the best gain is
    negative.  Under a constraint, selections
    that violate parity count as utility 0.
    """
    s = default_subsample(x.n) if subsample_s is None else int(subsample_s)
    if s < 1:
        raise ArgumentError("subsample size must be >= 1")
    rng = _rng(seed)
    a = np.zeros(x.n, dtype=np.uint8)

    def value(A):
        v = o.values(A, x)
        ok = np.ones(len(A), dtype=bool)
        if constraint is not None:
            ok = np.array([set_satisfies_parity(r, constraint) for r in A])
            v = np.where(ok, v, 0.0)
        return v, ok

    current = value(a[None])[0][0]
    while True:
        pool = np.flatnonzero(a == 0)
        if pool.size == 0:
            break
        cand = np.sort(rng.choice(pool, size=s, replace=False)) if s < pool.size else pool
        A = np.repeat(a[None], len(cand), axis=0)
        A[np.arange(len(cand)), cand] = 1
        v, ok = value(A)
        k = int(np.argmax(v))
        gain = v[k] - current
        # never take a zero-gain step into a set that violates the constraint
        if gain < 0 or (gain == 0 and not ok[k]):
            break
        a = A[k]
        current = v[k]
    return a


def historical_topk(scores, k: int) -> np.ndarray:
    """Select the ``k`` highest scores, ties going to the lower index."""
    scores = np.asarray(scores, dtype=float).ravel()
    if not 0 <= k <= len(scores):
        raise ArgumentError(f"k = {k} outside [0, {len(scores)}]")
    order = np.lexsort((np.arange(len(scores)), -scores))
    a = np.zeros(len(scores), dtype=np.uint8)
    a[order[:k]] = 1
    return a


def parity_topk(scores, k: int, c: ParityConstraint) -> np.ndarray:
    """Top-k within per-group quotas chosen so the selection satisfies parity.

    Among the feasible splits (k_M, k - k_M) the one closest to the
    unconstrained top-k split is used.
    """
    free = historical_topk(scores, k)
    M = c.groups.M.astype(bool)
    nM, nF = int(M.sum()), int((~M).sum())
    target = int(free[M].sum())
    feasible = [
        km for km in range(max(0, k - nF), min(k, nM) + 1)
        if abs(km / nM - (k - km) / nF) <= c.epsilon + 1e-12
    ]
    if not feasible:
        raise ArgumentError(f"no split of k = {k} satisfies parity at epsilon = {c.epsilon}")
    km = min(feasible, key=lambda q: (abs(q - target), q))
    scores = np.asarray(scores, dtype=float)
    a = np.zeros(len(scores), dtype=np.uint8)
    for mask, quota in ((M, km), (~M, k - km)):
        idx = np.flatnonzero(mask)
        a[idx[historical_topk(scores[idx], quota) == 1]] = 1
    return a


__all__ = [
    "OptimizerConfig",
    "TraceRecord",
    "TrainTrace",
    "constrained_policy_gradient",
    "default_subsample",
    "grad_separable_linear",
    "grad_softmax",
    "grad_threshold",
    "historical_topk",
    "parity_topk",
    "policy_gradient",
    "round_policy",
    "stochastic_greedy",
    "uniform_policy",
]
