"""Command-line front end.

Exit codes: 0 success, 2 configuration or input error, 3 capacity
exceeded, 4 optimizer divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .contribution import emc_exact, emc_mc, shapley_exact
from .core import (
    DeterministicTable,
    ExpectedUtilityOracle,
    Linear,
    LinearPredictor,
    LogLinear,
    Population,
    Tabular,
    _read_csv,
    forced_policy_utility,
    policy_utility,
)
from .errors import ArgumentError, CapacityError, DivergenceError, MeritselError
from .experiment import SUMMARY_FIELDS, ExperimentConfig, run_experiment, small_preset, threshold_features
from .fairness import load_constraint
from .meritocracy import audit
from .optimize import OptimizerConfig, constrained_policy_gradient, policy_gradient
from .policies import (
    LogisticThresholdPolicy,
    SeparableLinearPolicy,
    SoftmaxPolicy,
    load_policy,
    policy_to_json,
    uniform_policy,
)
from .simdata import (
    GeneratorConfig,
    fit_outcome_model,
    generate_history,
    generate_population,
    generate_true_outcomes,
)

EXIT_CONFIG, EXIT_CAPACITY, EXIT_DIVERGENCE = 2, 3, 4

LANDSCAPE_DEFAULT = {
    "utility": {"kind": "log_linear", "cost": 0.3},
    "outcomes": {"kind": "table", "values": [[0.9, 0.5, 0.7], [0.4, 0.8, 0.6]]},
}


# ---------------------------------------------------------------------------
# file helpers


def _load_json(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ArgumentError(f"{path}:{exc.lineno}: {exc.msg}") from None


def read_outcomes(path) -> np.ndarray:
    """Outcome CSV ``id,y1..ym``."""
    rows = _read_csv(path)
    if rows[0][0] != "id" or len(rows[0]) < 2:
        raise ArgumentError(f"{path}: header must be id,y1,...")
    vals = []
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            vals.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ArgumentError(f"{path}:{lineno}: {exc}") from None
        if len(vals[-1]) != len(rows[0]) - 1:
            raise ArgumentError(f"{path}:{lineno}: expected {len(rows[0]) - 1} values")
    return np.array(vals, dtype=float)


def write_outcomes(path, y: np.ndarray, ids) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *(f"y{j + 1}" for j in range(y.shape[1]))])
        for i, row in enumerate(y):
            w.writerow([ids[i], *(repr(float(v)) for v in row)])


def _resolve(base: Path | None, p: str) -> str:
    q = Path(p)
    return str(q if q.is_absolute() or base is None else base / q)


def build_oracle(conf: dict, base: Path | None = None) -> ExpectedUtilityOracle:
    """Oracle from ``{"utility": {...}, "outcomes": {...}}``."""
    try:
        u = conf["utility"]
        kind = u["kind"]
    except (KeyError, TypeError):
        raise ArgumentError("utility config needs utility.kind") from None
    if kind == "log_linear":
        utility = LogLinear(float(u.get("cost", 0.0)), floor=float(u.get("floor", 1e-9)))
    elif kind == "linear":
        utility = Linear(float(u.get("cost", 0.0)))
    elif kind == "tabular":
        if "table" in u:
            utility = Tabular(np.asarray(u["table"], dtype=float))
        elif "path" in u:
            utility = Tabular.from_csv(_resolve(base, u["path"]))
        else:
            raise ArgumentError("tabular utility needs 'table' or 'path'")
    else:
        raise ArgumentError(f"unknown utility kind {kind!r}")
    out = conf.get("outcomes")
    if out is None:
        if not isinstance(utility, Tabular):
            raise ArgumentError(f"{kind} utility needs an outcomes entry")
        return ExpectedUtilityOracle(utility)
    okind = out.get("kind")
    if okind == "table":
        y = np.asarray(out["values"], dtype=float) if "values" in out else read_outcomes(_resolve(base, out["path"]))
        model = DeterministicTable(y)
    elif okind == "model":
        model = LinearPredictor.from_dict(_load_json(_resolve(base, out["path"])))
    else:
        raise ArgumentError(f"unknown outcomes kind {okind!r}")
    return ExpectedUtilityOracle(utility, model)


def load_oracle(path) -> ExpectedUtilityOracle:
    return build_oracle(_load_json(path), Path(path).parent)


def _population(args) -> Population:
    return Population.from_csv(args.population, args.group_attr)


def _out_path(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _settings(args) -> dict:
    return _load_json(args.config) if args.config else {}


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = GeneratorConfig.from_dict(_settings(args))
    if args.n is not None:
        cfg = replace(cfg, n=args.n)
    ss = np.random.SeedSequence(args.seed)
    s_pop, s_out, s_hist = ss.spawn(3)
    pop = generate_population(cfg, np.random.default_rng(s_pop))
    y = generate_true_outcomes(pop, cfg, np.random.default_rng(s_out))
    pop.to_csv(_out_path(args, "population.csv"))
    write_outcomes(_out_path(args, "outcomes.csv"), y, pop.ids)
    hist, hy = generate_history(cfg, s_hist, admitted_only=not args.full_history)
    hist.to_csv(_out_path(args, "history_population.csv"))
    write_outcomes(_out_path(args, "history_outcomes.csv"), hy, hist.ids)
    print(f"wrote {pop.n} applicants and {hist.n} historical records to {args.out}")
    return 0


def cmd_fit(args) -> int:
    x = Population.from_csv(args.history, args.group_attr)
    y = read_outcomes(args.outcomes)
    model = fit_outcome_model((x, y))
    path = _out_path(args, "model.json")
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=2)
    print(f"wrote {path} (ridge fallback: {str(model.ridge).lower()})")
    return 0


def _initial_policy(family: str, x: Population, settings: dict):
    if family == "separable_linear":
        return SeparableLinearPolicy(np.full(x.n, 0.5))
    if family == "softmax":
        return SoftmaxPolicy(np.zeros(x.n), float(settings.get("beta", 1.0)))
    if family == "threshold":
        X = threshold_features(x, _threshold_names(x, settings))
        return LogisticThresholdPolicy(np.zeros(X.shape[1]), X)
    raise ArgumentError(f"unknown policy family {family!r}")


def _threshold_names(x: Population, settings: dict) -> list[str]:
    return list(settings.get("features", x.feature_names))


def cmd_optimize(args) -> int:
    x = _population(args)
    o = load_oracle(args.utility)
    settings = _settings(args)
    opt = dict(settings.get("optimizer", {}))
    opt.setdefault("seed", args.seed)
    cfg = OptimizerConfig.from_dict(opt)
    pi0 = _initial_policy(args.family, x, settings)
    if args.constraint:
        c = load_constraint(args.constraint, x)
        pi, trace = constrained_policy_gradient(o, pi0, x, c, cfg)
    else:
        pi, trace = policy_gradient(o, pi0, x, cfg)
    trace.to_csv(_out_path(args, "trace.csv"))
    d = json.loads(policy_to_json(pi))
    if args.family == "threshold":
        d["features"] = _threshold_names(x, settings)
    with open(_out_path(args, "policy.json"), "w") as fh:
        fh.write(json.dumps(d) + "\n")
    last = trace.records[-1]
    print(f"{trace.family}: {len(trace)} iterations, utility {last.utility:.6g}, "
          f"converged={str(trace.converged).lower()}, infeasible={str(trace.infeasible).lower()}")
    return 0


def _policy_for(args, x: Population):
    """Load a policy; threshold policies written by ``optimize`` carry their feature list."""
    if args.policy.endswith(".json"):
        d = _load_json(args.policy)
        if d.get("family") == "threshold" and "features" in d:
            return LogisticThresholdPolicy(np.asarray(d["theta"], dtype=float), threshold_features(x, d["features"]))
    return load_policy(args.policy, x)


def cmd_audit(args) -> int:
    x = _population(args)
    o = load_oracle(args.utility)
    pi = _policy_for(args, x)
    method = "mc" if args.mc else "auto"
    rep = audit(o, pi, x, tol=args.tol, method=method, n_samples=args.mc or 200, seed=args.seed)
    mode = "exact" if rep.method == "exact" else "mc"
    util = policy_utility(o, pi, x, mode, args.mc or 10_000, args.seed)
    text = rep.to_json(indent=2)
    print(text)
    with open(_out_path(args, "audit.json"), "w") as fh:
        fh.write(text + "\n")
    with open(_out_path(args, "audit.csv"), "w") as fh:
        fh.write(rep.to_csv(Path(args.policy).stem, util))
    return 0


def cmd_emc(args) -> int:
    x = _population(args)
    o = load_oracle(args.utility)
    pi = _policy_for(args, x) if args.policy else uniform_policy(x.n)
    cv = emc_mc(o, pi, x, args.mc, args.seed) if args.mc else emc_exact(o, pi, x)
    path = _out_path(args, "emc.csv")
    cv.to_csv(path, x.ids)
    _echo(path)
    return 0


def cmd_shapley(args) -> int:
    x = _population(args)
    o = load_oracle(args.utility)
    cv = shapley_exact(o, x)
    path = _out_path(args, "shapley.csv")
    cv.to_csv(path, x.ids)
    _echo(path)
    return 0


def _echo(path) -> None:
    with open(path) as fh:
        sys.stdout.write(fh.read())


LANDSCAPE_FIELDS = ("theta1", "theta2", "utility", "emc1", "emc2", "grad1", "grad2", "shapley1", "shapley2")


def landscape_rows(o: ExpectedUtilityOracle, step: float) -> list[dict]:
    """Utility, EMC, gradient and Shapley value over a grid of separable policies on two candidates.

    The gradient is U(pi + i) - U(pi - i), which equals EMC_i / (1 - theta_i)
    wherever theta_i < 1 and stays defined on the theta_i = 1 edge.
    """
    if not 0 < step <= 1:
        raise ArgumentError("grid step must lie in (0, 1]")
    k = int(round(1.0 / step))
    if abs(k * step - 1.0) > 1e-9:
        raise ArgumentError("grid step must divide 1")
    n = _utility_size(o)
    if n != 2:
        raise ArgumentError(f"the landscape needs a two-candidate utility, got N = {n}")
    x = Population(np.zeros((2, 0)))
    phi = shapley_exact(o, x).values
    grid = np.linspace(0.0, 1.0, k + 1)
    rows = []
    for t1 in grid:
        for t2 in grid:
            pi = SeparableLinearPolicy([t1, t2])
            emc = emc_exact(o, pi, x).values
            grad = [forced_policy_utility(o, pi, x, [i]) - forced_policy_utility(o, pi, x, [], [i]) for i in range(2)]
            rows.append({
                "theta1": t1, "theta2": t2, "utility": policy_utility(o, pi, x),
                "emc1": emc[0], "emc2": emc[1], "grad1": grad[0], "grad2": grad[1],
                "shapley1": phi[0], "shapley2": phi[1],
            })
    return rows


def _utility_size(o: ExpectedUtilityOracle) -> int:
    if isinstance(o.utility, Tabular):
        return o.utility.n
    if isinstance(o.outcomes, DeterministicTable):
        return o.outcomes.y.shape[0]
    raise ArgumentError("the landscape needs a tabular utility or an explicit outcome table")


def cmd_landscape(args) -> int:
    o = load_oracle(args.utility) if args.utility else build_oracle(LANDSCAPE_DEFAULT)
    rows = landscape_rows(o, args.step)
    path = _out_path(args, "landscape.csv")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LANDSCAPE_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) for k, v in r.items()})
    print(f"wrote {len(rows)} grid points to {path}")
    return 0


def cmd_experiment(args) -> int:
    settings = _settings(args)
    cfg = ExperimentConfig.from_dict(settings)
    if args.preset == "small":
        cfg = replace(small_preset(), **{k: getattr(cfg, k) for k in settings})
    overrides = {"base_seed": args.seed}
    if args.repeats is not None:
        overrides["repeats"] = args.repeats
        overrides["seeds"] = None
    cfg = replace(cfg, **overrides)
    summary, rows = run_experiment(cfg, args.out)
    failed = [r for r in rows if r.get("error")]
    w = csv.DictWriter(sys.stdout, fieldnames=SUMMARY_FIELDS, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in summary:
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else str(v).lower()) for k, v in r.items()})
    for r in failed:
        print(f"warning: {r['algorithm']} (repeat {r['repeat']}) failed: {r['error']}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--config", help="JSON settings file")

    p = argparse.ArgumentParser(prog="meritsel", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    def population_args(sp):
        sp.add_argument("--population", required=True, help="population CSV (id,group,f1..fd)")
        sp.add_argument("--group-attr", default="gender", help="name for the group column (default gender)")

    sp = add("gen", cmd_gen, "generate a synthetic applicant pool, outcomes and history")
    sp.add_argument("--n", type=int, help="number of applicants (overrides the config)")
    sp.add_argument("--full-history", action="store_true", help="keep non-admitted historical records")

    sp = add("fit", cmd_fit, "fit the linear outcome model on historical records")
    sp.add_argument("--history", required=True, help="historical population CSV")
    sp.add_argument("--outcomes", required=True, help="historical outcome CSV (id,y1..ym)")
    sp.add_argument("--group-attr", default="gender")

    sp = add("optimize", cmd_optimize, "train a policy by (constrained) policy gradient")
    population_args(sp)
    sp.add_argument("--utility", required=True, help="utility config JSON")
    sp.add_argument("--family", default="separable_linear", choices=["separable_linear", "softmax", "threshold"])
    sp.add_argument("--constraint", help='parity constraint JSON, e.g. {"epsilon": 0.1, "group_attr": "gender"}')

    sp = add("audit", cmd_audit, "audit a policy for swap and local stability")
    population_args(sp)
    sp.add_argument("--utility", required=True)
    sp.add_argument("--policy", required=True, help="policy JSON or tabular CSV")
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--mc", type=int, help="audit by sampling this many selections")

    sp = add("emc", cmd_emc, "expected marginal contributions under a policy")
    population_args(sp)
    sp.add_argument("--utility", required=True)
    sp.add_argument("--policy", help="policy file (default: uniform)")
    sp.add_argument("--mc", type=int, help="Monte Carlo estimate with this many samples")

    sp = add("shapley", cmd_shapley, "exact Shapley values")
    population_args(sp)
    sp.add_argument("--utility", required=True)

    sp = add("landscape", cmd_landscape, "utility/EMC/gradient grid for two candidates")
    sp.add_argument("--utility", help="two-candidate utility config (default: log-linear, c = 0.3)")
    sp.add_argument("--step", type=float, default=0.05)

    sp = add("experiment", cmd_experiment, "constrained vs unconstrained comparison of algorithms")
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--preset", choices=["default", "small"], default="default",
                    help="'small' uses N = 12 with exact audits")

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (MeritselError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
