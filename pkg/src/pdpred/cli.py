"""Command-line interface: ``pdpred {gen,run,verify,sweep,smoothcheck}``.

Exit codes: 0 success, 1 a verifier reported a violation, 2 usage or input
error.  Violations are printed one per line as ``VIOLATION key=value ...``.
"""

import argparse
import sys

import numpy as np

from . import io as fmt
from .adauction import (
    lemma4_violations,
    prediction_value,
    robustness_guarantee,
    run_ad_auction,
    step_ratio_violations,
    verify_auction_dual,
    verify_budgets,
)
from .bench import (
    ExperimentConfig,
    PRESETS,
    emit_dat,
    feasible_bits,
    generate_instance,
    preset,
    random_packing_instance,
    run_sweep,
)
from .engine import (
    PredictionStream,
    lemma1_violations,
    robustness_bound,
    run_online_packing,
    verify_dual,
    verify_feasibility,
    verify_trace,
)
from .objective import (
    CoverageOracle,
    EvalMode,
    LinearOracle,
    MAX_EXHAUSTIVE_SETS_N,
    SmoothnessParams,
    check_local_smoothness,
)
from .offline import base_prediction, generate_prediction, packing_opt_frac, solve_adauction_lp

DEFAULT_SEED_INSTANCE = 0
DEFAULT_SEED_PRED = 1
DEFAULT_SEED_ALG = 2


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t)


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t)


def _add_instance_flags(p):
    p.add_argument("--buyers", type=int, default=20)
    p.add_argument("--items", type=int, default=1000)
    p.add_argument("--bidders-per-item", type=int, default=6)
    p.add_argument("--budget-fraction", type=float, default=0.1)
    p.add_argument("--lognormal", choices=("normal", "moments"), default="normal")
    p.add_argument("--seed-instance", type=int, default=DEFAULT_SEED_INSTANCE)


def build_parser():
    parser = argparse.ArgumentParser(prog="pdpred", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value file with default flag values")
    sub = parser.add_subparsers(dest="command", required=True)
    leaves = []

    gen = sub.add_parser("gen", help="generate an instance file")
    gen_sub = gen.add_subparsers(dest="problem", required=True)
    g = gen_sub.add_parser("adauction")
    _add_instance_flags(g)
    g.add_argument("--out", required=True)
    g.add_argument("--predictions-out")
    g.add_argument("--epsilon", type=float, default=0.0)
    g.add_argument("--seed-pred", type=int, default=DEFAULT_SEED_PRED)
    leaves.append(g)
    g = gen_sub.add_parser("packing")
    g.add_argument("--resources", type=int, default=10)
    g.add_argument("--elements", type=int, default=30)
    g.add_argument("--objective", choices=("linear", "coverage"), default="linear")
    g.add_argument("--seed-instance", type=int, default=DEFAULT_SEED_INSTANCE)
    g.add_argument("--out", required=True)
    g.add_argument("--predictions-out")
    g.add_argument("--seed-pred", type=int, default=DEFAULT_SEED_PRED)
    leaves.append(g)

    run = sub.add_parser("run", help="run one algorithm")
    run_sub = run.add_subparsers(dest="problem", required=True)
    r = run_sub.add_parser("packing")
    r.add_argument("--instance", required=True)
    r.add_argument("--predictions")
    r.add_argument("--eta", type=float, default=1.0)
    r.add_argument("--lam", type=float, default=1.0)
    r.add_argument("--mu", type=float, default=1.0)
    r.add_argument("--step", type=float, default=1e-4)
    r.add_argument("--method", choices=("auto", "exact", "euler"), default="auto")
    r.add_argument("--samples", type=int)
    r.add_argument("--seed-alg", type=int, default=DEFAULT_SEED_ALG)
    r.add_argument("--trace")
    r.add_argument("--opt", type=float)
    r.add_argument("--bound-form", choices=("normalized", "literal"), default="normalized")
    leaves.append(r)
    r = run_sub.add_parser("adauction")
    r.add_argument("--instance")
    _add_instance_flags(r)
    r.add_argument("--predictions")
    r.add_argument("--epsilon", type=float)
    r.add_argument("--seed-pred", type=int, default=DEFAULT_SEED_PRED)
    r.add_argument("--no-prediction", action="store_true")
    r.add_argument("--eta", type=float, default=1.0)
    r.add_argument("--opt", type=float)
    leaves.append(r)

    v = sub.add_parser("verify", help="replay a packing trace through the verifiers")
    v.add_argument("--trace", required=True)
    v.add_argument("--bound-form", choices=("normalized", "literal"), default="normalized")
    leaves.append(v)

    s = sub.add_parser("sweep", help="run the (eta, epsilon) experiment")
    s.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    s.add_argument("--out-dir", default=".")
    s.add_argument("--buyers", type=int)
    s.add_argument("--items", type=int)
    s.add_argument("--bidders-per-item", type=int)
    s.add_argument("--budget-fraction", type=float)
    s.add_argument("--lognormal", choices=("normal", "moments"))
    s.add_argument("--eta", type=_floats, help="comma-separated eta grid")
    s.add_argument("--epsilon", type=_floats, help="comma-separated epsilon grid")
    s.add_argument("--seed-instance", type=_ints, help="comma-separated instance seeds")
    s.add_argument("--seed-pred", type=int)
    s.add_argument("--seed-alg", type=int)
    leaves.append(s)

    c = sub.add_parser("smoothcheck", help="check local smoothness of an objective")
    c.add_argument("--instance", help="packing instance whose objective is checked")
    c.add_argument("--objective", choices=("linear", "coverage"), default="coverage")
    c.add_argument("--elements", type=int, default=8)
    c.add_argument("--seed-instance", type=int, default=DEFAULT_SEED_INSTANCE)
    c.add_argument("--lam", type=float, default=1.0)
    c.add_argument("--mu", type=float, default=1.0)
    c.add_argument("--trials", type=int, default=64)
    c.add_argument("--samples", type=int)
    c.add_argument("--seed-alg", type=int, default=DEFAULT_SEED_ALG)
    leaves.append(c)
    return parser, leaves


def _read_config(path):
    out = {}
    with open(path) as fh:
        for k, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep or not key.strip():
                raise fmt.FormatError(path, k, "expected key=value")
            out[key.strip().replace("-", "_")] = (val.strip(), k)
    return out


def _apply_config(path, leaves, parser):
    entries = _read_config(path)
    known = set()
    for leaf in leaves:
        dests = {a.dest: a for a in leaf._actions}
        updates = {}
        for key, (val, _) in entries.items():
            if key in dests:
                known.add(key)
                action = dests[key]
                if isinstance(action, argparse._StoreTrueAction):
                    updates[key] = val.lower() in ("1", "true", "yes", "on")
                else:
                    updates[key] = val
        leaf.set_defaults(**updates)
    for key, (_, k) in entries.items():
        if key not in known:
            parser.error(f"{path}:{k}: unknown config key {key!r}")


def _token(value):
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(_token(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _violations(items, out):
    for v in items:
        out.write("VIOLATION " + " ".join(f"{k}={_token(v[k])}" for k in v) + "\n")
    return bool(items)


def _kv(out, key, value):
    if isinstance(value, float):
        value = f"{value:.10g}"
    out.write(f"{key}: {value}\n")


def cmd_gen(args, out):
    if args.problem == "adauction":
        config = ExperimentConfig(buyers=args.buyers, items=args.items,
                                  bidders_per_item=args.bidders_per_item,
                                  budget_fraction=args.budget_fraction, lognormal=args.lognormal)
        inst = generate_instance(config, args.seed_instance)
        fmt.write_adauction(args.out, inst)
        _kv(out, "r_max", inst.r_max)
        if args.predictions_out:
            plan = generate_prediction(base_prediction(inst), args.epsilon, args.seed_pred, inst)
            fmt.write_auction_predictions(args.predictions_out, plan.assignment)
    else:
        rng = np.random.default_rng(args.seed_instance)
        inst = random_packing_instance(rng, m_max=args.resources, n_max=args.elements,
                                       kind=args.objective)
        fmt.write_packing(args.out, inst)
        _kv(out, "m", inst.m)
        _kv(out, "n", inst.n)
        if args.predictions_out:
            bits = feasible_bits(np.random.default_rng(args.seed_pred), inst)
            fmt.write_bit_predictions(args.predictions_out, bits)
    return 0


def cmd_run_packing(args, out):
    inst = fmt.read_packing(args.instance)
    bits = fmt.read_bit_predictions(args.predictions, inst.n) if args.predictions else np.zeros(inst.n, int)
    mode = EvalMode.exact() if args.samples is None else EvalMode.sampled(args.samples, args.seed_alg)
    smooth = SmoothnessParams(args.lam, args.mu)
    res = run_online_packing(inst, bits, eta=args.eta, smooth=smooth, mode=mode, step=args.step,
                             method=args.method)
    if args.trace:
        fmt.write_trace(args.trace, res.trace)
    p_val = PredictionStream(bits, inst.m).value(inst, mode)
    _kv(out, "objective", res.objective)
    _kv(out, "prediction_value", p_val)
    _kv(out, "consistency", res.objective / p_val if p_val > 0 else "n/a")
    opt = args.opt
    if opt is None and isinstance(inst.oracle, (LinearOracle, CoverageOracle)):
        opt = packing_opt_frac(inst)
    kind = "linear" if isinstance(inst.oracle, LinearOracle) else "submodular"
    _kv(out, "opt_frac", opt if opt is not None else "n/a")
    _kv(out, "robustness", res.objective / opt if opt else "n/a")
    _kv(out, "robustness_bound", robustness_bound(args.eta, inst.d, inst.rho, smooth, kind))
    _kv(out, "prediction_infeasible_at",
        res.prediction_infeasible_at if res.prediction_infeasible_at is not None else "none")
    bad = []
    feas = verify_feasibility(res.x, res.y, inst, res.state.b_bar).violations
    lem = lemma1_violations(res.trace, form=args.bound_form)
    dual = verify_dual(res.dual, inst.oracle, res.state.b_bar, args.lam, args.mu).violations
    _kv(out, "feasibility", "ok" if not feas else "FAIL")
    _kv(out, f"alpha_bound_{args.bound_form}", "ok" if not lem else "FAIL")
    note = "" if inst.n <= MAX_EXHAUSTIVE_SETS_N else " (configuration family skipped, n > 12)"
    _kv(out, "dual", ("ok" if not dual else "FAIL") + note)
    bad = feas + lem + dual
    return 1 if _violations(bad, out) else 0


def cmd_run_adauction(args, out):
    if args.no_prediction and (args.predictions or args.epsilon is not None):
        raise _Usage("--no-prediction conflicts with --predictions/--epsilon")
    if args.instance:
        inst = fmt.read_adauction(args.instance)
    else:
        config = ExperimentConfig(buyers=args.buyers, items=args.items,
                                  bidders_per_item=args.bidders_per_item,
                                  budget_fraction=args.budget_fraction, lognormal=args.lognormal)
        inst = generate_instance(config, args.seed_instance)
    if args.no_prediction:
        pred = np.zeros(inst.n, dtype=int)
    elif args.predictions:
        pred = fmt.read_auction_predictions(args.predictions, inst.n, inst.m)
    else:
        eps = 0.0 if args.epsilon is None else args.epsilon
        pred = generate_prediction(base_prediction(inst), eps, args.seed_pred, inst).assignment
    res = run_ad_auction(inst, pred, eta=args.eta, use_prediction=not args.no_prediction)
    opt = args.opt if args.opt is not None else solve_adauction_lp(inst)[0]
    p_val = prediction_value(inst, pred) if not args.no_prediction else 0.0
    r_max = inst.r_max
    _kv(out, "revenue", res.revenue)
    _kv(out, "prediction_value", p_val)
    _kv(out, "consistency", res.revenue / p_val if p_val > 0 else "n/a")
    _kv(out, "opt_frac", opt)
    _kv(out, "robustness", res.revenue / opt if opt > 0 else "n/a")
    _kv(out, "r_max", r_max)
    _kv(out, "robustness_bound", robustness_guarantee(r_max, args.eta) if r_max > 0 else 0.0)
    pos = res.infeasibility_position
    _kv(out, "infeasibility_position", "none" if pos is None else pos)
    lem = res.violations + lemma4_violations(res.state)
    budgets = verify_budgets(res.state).violations
    dual = verify_auction_dual(res.certificate, inst)
    steps = step_ratio_violations(res.state)
    _kv(out, "alpha_bound", "ok" if not lem else "FAIL")
    _kv(out, "budgets", "ok" if not budgets else "FAIL")
    _kv(out, "dual", "ok" if not dual else "FAIL")
    _kv(out, "step_ratio", "ok" if not steps else "FAIL")
    return 1 if _violations(lem + budgets + dual + steps, out) else 0


def cmd_verify(args, out):
    trace = fmt.read_trace(args.trace)
    bad = verify_trace(trace, form=args.bound_form)
    _kv(out, "elements", len(trace.finals))
    _kv(out, "snapshots", len(trace.snapshots))
    _kv(out, "verdict", "ok" if not bad else "FAIL")
    return 1 if _violations(bad, out) else 0


def cmd_sweep(args, out):
    overrides = dict(buyers=args.buyers, items=args.items, bidders_per_item=args.bidders_per_item,
                     budget_fraction=args.budget_fraction, lognormal=args.lognormal,
                     etas=args.eta, epsilons=args.epsilon, seeds=args.seed_instance,
                     seed_pred=args.seed_pred, seed_alg=args.seed_alg, out_dir=args.out_dir)
    config = preset(args.preset, **{k: v for k, v in overrides.items() if v is not None})
    result = run_sweep(config)
    for path in emit_dat(result, config.out_dir):
        out.write(f"wrote {path}\n")
    bad = [dict(kind="robustness_bound", seed=r["seed"], epsilon=r["epsilon"], eta=r["eta"])
           for r in result.rows
           if r["robustness"] is not None and r["robustness"] < r["bound"] - 1e-6]
    return 1 if _violations(bad, out) else 0


def cmd_smoothcheck(args, out):
    if args.instance:
        oracle = fmt.read_packing(args.instance).oracle
    else:
        rng = np.random.default_rng(args.seed_instance)
        oracle = random_packing_instance(rng, m_max=1, n_max=args.elements, kind=args.objective).oracle
    mode = None if args.samples is None else EvalMode.sampled(args.samples, args.seed_alg)
    report = check_local_smoothness(oracle, SmoothnessParams(args.lam, args.mu), trials=args.trials,
                                    seed=args.seed_alg, mode=mode)
    _kv(out, "oracle", repr(oracle))
    _kv(out, "checked", report.checked)
    _kv(out, "max_violation", report.max_violation)
    _kv(out, "verdict", "ok" if report.ok else "FAIL")
    return 1 if _violations([dict(kind="smoothness", **v) for v in report.violations], out) else 0


class _Usage(Exception):
    pass


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    parser, leaves = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        head = argparse.ArgumentParser(add_help=False)
        head.add_argument("--config")
        known, _ = head.parse_known_args(argv)
        if known.config:
            _apply_config(known.config, leaves, parser)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, fmt.FormatError) as exc:
        sys.stderr.write(f"pdpred: error: {exc}\n")
        return 2
    handlers = {"gen": cmd_gen, "verify": cmd_verify, "sweep": cmd_sweep,
                "smoothcheck": cmd_smoothcheck}
    if args.command == "run":
        handler = cmd_run_packing if args.problem == "packing" else cmd_run_adauction
    else:
        handler = handlers[args.command]
    try:
        return handler(args, out)
    except _Usage as exc:
        sys.stderr.write(f"pdpred: error: {exc}\n")
        return 2
    except (OSError, ValueError, TypeError) as exc:
        sys.stderr.write(f"pdpred: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
