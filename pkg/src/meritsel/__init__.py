"""Stochastic set-selection policies, expected marginal contributions and
meritocracy audits."""

from .contribution import ContributionVector, emc_exact, emc_mc, shapley_exact
from .core import (
    MAX_EXACT_N,
    DeterministicTable,
    DiscreteDistribution,
    ExpectedUtilityOracle,
    Linear,
    LinearPredictor,
    LogLinear,
    Population,
    Tabular,
    expected_set_utility,
    forced_policy_utility,
    policy_utility,
    set_utility,
)
from .errors import ArgumentError, CapacityError, DimensionError, DivergenceError, MeritselError, ModelError
from .fairness import (
    GroupAffiliation,
    ParityConstraint,
    parity_gap,
    parity_penalty,
    parity_penalty_gradient,
    set_satisfies_parity,
)
from .meritocracy import AuditReport, audit, check_local_stability, check_swap_stability, dev_local, dev_swap
from .optimize import (
    OptimizerConfig,
    TrainTrace,
    constrained_policy_gradient,
    grad_separable_linear,
    grad_softmax,
    grad_threshold,
    historical_topk,
    policy_gradient,
    stochastic_greedy,
)
from .policies import (
    LogisticThresholdPolicy,
    SeparableLinearPolicy,
    ShapleyWeighting,
    SoftmaxPolicy,
    TabularPolicy,
    group_selection_rate,
    marginal_prob,
    prob_of_set,
    sample,
    uniform_policy,
)

__version__ = "0.1.0"
