"""Command-line front end.

Every command reads a YAML config (``--config``) and/or files written by an
earlier command, and writes CSV or JSON. Exit status is 0 on success, 2 for
invalid input (bad config, malformed CSV, unknown option values) and 1 for
any other failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .crossfit import (
    DEFAULT_BANDWIDTH_C,
    Nuisances,
    Pipeline,
    crossfit_estimate,
    fit_nuisances,
    nuisance_error_norms,
    oracle_tables,
    w_grid,
)
from .experiment import ExperimentConfig, load_config, run_experiment
from .nuisance import CensoringSurvival, fit_censoring, fit_transitions, load_models, plug_in_outcome_model, save_models
from .nuisance.hazards import HazardModel
from .pseudo import PseudoOutcomes, dr_batch, ipcw_transform, oracle_bias_diagnostic
from .rdd import rdd_sensitivity, simulate_fuzzy_design, write_binned_csv
from .sim import ScenarioConfig, observe_cohort, read_cohort_csv, simulate_cohort, write_cohort_csv
from .smooth import bandwidth_rule, fit_curve, smoother_weights, write_curve_csv
from .truth import ValueTables


def _scenario(args) -> ScenarioConfig:
    if not getattr(args, "config", None):
        return ScenarioConfig()
    return ScenarioConfig.from_dict(load_config(args.config).get("scenario", {}))


def _experiment(args) -> ExperimentConfig:
    data = load_config(args.config) if args.config else {}
    cfg = ExperimentConfig.from_dict(data)
    overrides = {}
    if args.n is not None:
        overrides["n"] = tuple(args.n)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.reps is not None:
        overrides["reps"] = args.reps
    if args.k is not None:
        overrides["k"] = args.k
    if overrides:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "experiment": {**cfg.to_dict()["experiment"], **overrides}})
    return cfg


def _write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).write_text(text + "\n")


def _censoring(source: str, cohort, scenario, seed, epsilon) -> CensoringSurvival:
    """A kind name (oracle, parametric, hal, zero) or a models JSON with a ``gamma`` entry."""
    if source.endswith(".json"):
        models = load_models(source)
        if "gamma" not in models:
            raise ValueError(f"{source}: no 'gamma' model")
        return CensoringSurvival(models["gamma"], epsilon)
    return CensoringSurvival(fit_censoring(source, cohort, scenario, seed), epsilon)


def _outcome(source: str, cohort, scenario, seed, w_step) -> ValueTables:
    """A kind name, a models JSON with mu12/mu13/mu23, or saved tables (.npz)."""
    if source.endswith(".npz"):
        return ValueTables.from_npz(source)
    if source.endswith(".json"):
        models = load_models(source)
        missing = {"mu12", "mu13", "mu23"} - set(models)
        if missing:
            raise ValueError(f"{source}: missing transition models {sorted(missing)}")
        transitions = (models["mu12"], models["mu13"], models["mu23"])
        return plug_in_outcome_model(transitions, scenario.eta, w_grid(scenario, w_step), label="fitted")
    if source == "oracle":
        return oracle_tables(scenario, w_step)
    transitions = fit_transitions(source, cohort, scenario, seed)
    return plug_in_outcome_model(transitions, scenario.eta, w_grid(scenario, w_step), label=source)


def cmd_simulate(args) -> None:
    scenario = _scenario(args)
    cohort = observe_cohort(simulate_cohort(scenario, args.n, seed=args.seed))
    write_cohort_csv(args.out, cohort)
    print(f"wrote {len(cohort)} subjects to {args.out}")


def cmd_fit_nuisance(args) -> None:
    scenario = _scenario(args)
    cohort = read_cohort_csv(args.inp, scenario.eta)
    models: dict[str, HazardModel] = {}
    if args.cens:
        models["gamma"] = fit_censoring(args.cens, cohort, scenario, args.seed)
    if args.outcome:
        for name, model in zip(("mu12", "mu13", "mu23"), fit_transitions(args.outcome, cohort, scenario, args.seed)):
            models[name] = model
    save_models(args.out, models)
    if args.tables and args.outcome:
        transitions = (models["mu12"], models["mu13"], models["mu23"])
        plug_in_outcome_model(transitions, scenario.eta, w_grid(scenario, args.w_step), label=args.outcome).to_npz(args.tables)
    print(f"wrote {sorted(models)} to {args.out}")


def cmd_transform(args) -> None:
    scenario = _scenario(args)
    cohort = read_cohort_csv(args.inp, scenario.eta)
    cens = _censoring(args.cens, cohort, scenario, args.seed, args.epsilon)
    if args.variant == "ipcw":
        out = ipcw_transform(cohort, cens)
    else:
        if not args.outcome:
            raise ValueError("--outcome is required for the dr variant")
        tables = _outcome(args.outcome, cohort, scenario, args.seed, args.w_step)
        out = dr_batch(cohort, cens, tables, args.quad_step,
                       variant="oracle-dr" if args.cens == "oracle" and args.outcome == "oracle" else "dr")
    out.to_csv(args.out)
    print(f"wrote {len(out)} pseudo-outcomes to {args.out}")


def cmd_regress(args) -> None:
    po = PseudoOutcomes.from_csv(args.inp)
    h = args.h if args.h is not None else bandwidth_rule(len(po), args.c)
    grid = np.array(args.w0) if args.w0 else np.linspace(args.w_lo, args.w_hi, args.grid_points)
    fits = fit_curve(po.w, po.value, grid, h, args.kernel)
    write_curve_csv(args.out, fits)
    if args.weights_out:
        p = smoother_weights(po.w, float(grid[0]), h, args.kernel)
        np.savetxt(args.weights_out, np.column_stack([po.ids, po.w, p]), delimiter=",", header="id,w,weight", comments="")
    print(f"h={h:.6g}; wrote {len(fits)} points to {args.out}")


def cmd_crossfit(args) -> None:
    scenario = _scenario(args)
    cohort = read_cohort_csv(args.inp, scenario.eta)
    pipeline = Pipeline(cens=args.cens, outcome=args.outcome or "oracle", variant=args.variant, c=args.c,
                        epsilon=args.epsilon, quad_step=args.quad_step)
    res = crossfit_estimate(cohort, args.k, args.w0, pipeline, scenario, seed=args.seed)
    _write_json(args.out, res.to_dict())


def cmd_rdd(args) -> None:
    if args.synthetic:
        d = simulate_fuzzy_design(args.synthetic, args.seed, w0=args.w0)
        y = PseudoOutcomes(np.arange(len(d.w)), d.w, d.y, "dr")
        a = PseudoOutcomes(np.arange(len(d.w)), d.w, d.a, "dr")
    else:
        if not (args.inp_y and args.inp_a):
            raise ValueError("give --in-y and --in-a, or --synthetic N")
        y, a = PseudoOutcomes.from_csv(args.inp_y), PseudoOutcomes.from_csv(args.inp_a)
    rows = rdd_sensitivity(y, a, args.w0, args.h, boundary=args.boundary, floor=args.floor)
    table = [{"h": r.h, **(r.result.to_dict() if r.result else {}), "error": r.error} for r in rows]
    _write_json(args.out, table)
    if args.bins_out:
        edges = np.linspace(y.w.min(), y.w.max(), args.bins + 1)
        write_binned_csv(args.bins_out, y.w, y.value, edges)


def cmd_experiment(args) -> None:
    cfg = _experiment(args)
    res = run_experiment(cfg, args.out)
    print(json.dumps({"failures": res.n_failures, "out": str(args.out)}))


def cmd_diagnose(args) -> None:
    scenario = _scenario(args)
    cohort = observe_cohort(simulate_cohort(scenario, args.n, seed=args.seed))
    pipeline = Pipeline(cens=args.cens, outcome=args.outcome)
    nuis: Nuisances = fit_nuisances(pipeline, cohort, scenario, args.seed)
    truth = oracle_tables(scenario)
    diag = oracle_bias_diagnostic(args.w0, nuis.cens, nuis.outcome, truth, scenario, args.n_mc, args.seed)
    h = bandwidth_rule(len(cohort), args.c)
    p = smoother_weights(cohort.w, args.w0, h)
    norms = nuisance_error_norms(nuis, truth, scenario, cohort.w, p, n_mc=args.norm_mc, seed=args.seed + 1)
    _write_json(args.out, {"bias_diagnostic": asdict(diag), "error_norms": asdict(norms), "h": h,
                           "sum_abs_weights": float(np.abs(p).sum())})


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drcut", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True, seed=True):
        if config:
            p.add_argument("--config", help="YAML config with a 'scenario' section")
        if seed:
            p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="-", help="output file ('-' for stdout where supported)")

    p = sub.add_parser("simulate", help="simulate an observed cohort to long-format CSV")
    common(p)
    p.add_argument("--n", type=int, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-nuisance", help="fit censoring and/or transition hazards to JSON")
    common(p)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--cens", choices=("oracle", "parametric", "hal", "zero"))
    p.add_argument("--outcome", choices=("oracle", "hal", "zero"))
    p.add_argument("--tables", help="also write outcome value tables (.npz)")
    p.add_argument("--w-step", type=float, default=0.1)
    p.set_defaults(func=cmd_fit_nuisance)

    p = sub.add_parser("transform", help="build pseudo-outcomes")
    common(p)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--variant", choices=("ipcw", "dr"), default="dr")
    p.add_argument("--cens", default="oracle", help="kind name or models JSON")
    p.add_argument("--outcome", help="kind name, models JSON or tables .npz")
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--quad-step", type=float, default=0.01)
    p.add_argument("--w-step", type=float, default=0.1)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("regress", help="local linear regression of pseudo-outcomes on W")
    common(p, config=False, seed=False)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--w0", type=float, action="append")
    p.add_argument("--h", type=float)
    p.add_argument("--c", type=float, default=DEFAULT_BANDWIDTH_C)
    p.add_argument("--kernel", choices=("epanechnikov", "triangular"), default="epanechnikov")
    p.add_argument("--w-lo", type=float, default=-4.0)
    p.add_argument("--w-hi", type=float, default=4.0)
    p.add_argument("--grid-points", type=int, default=33)
    p.add_argument("--weights-out")
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("crossfit", help="K-fold cross-fitted estimate")
    common(p)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--w0", type=float, action="append", required=True)
    p.add_argument("--variant", choices=("ipcw", "dr"), default="dr")
    p.add_argument("--cens", choices=("oracle", "parametric", "hal", "zero"), default="oracle")
    p.add_argument("--outcome", choices=("oracle", "hal", "zero"))
    p.add_argument("--c", type=float, default=DEFAULT_BANDWIDTH_C)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--quad-step", type=float, default=0.01)
    p.set_defaults(func=cmd_crossfit)

    p = sub.add_parser("rdd", help="fuzzy regression discontinuity on pseudo-outcomes")
    common(p, config=False)
    p.add_argument("--in-y", dest="inp_y")
    p.add_argument("--in-a", dest="inp_a")
    p.add_argument("--synthetic", type=int, help="use a synthetic fuzzy design of this size")
    p.add_argument("--w0", type=float, required=True)
    p.add_argument("--h", type=float, action="append", required=True)
    p.add_argument("--boundary", choices=("right", "left"), default="right")
    p.add_argument("--floor", type=float, default=0.05)
    p.add_argument("--bins-out")
    p.add_argument("--bins", type=int, default=40)
    p.set_defaults(func=cmd_rdd)

    p = sub.add_parser("experiment", help="replication experiment (curves, L2 errors, coverage)")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, action="append")
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("diagnose", help="bias diagnostic and nuisance error norms at w0")
    common(p)
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--w0", type=float, default=0.0)
    p.add_argument("--cens", choices=("oracle", "parametric", "hal", "zero"), default="parametric")
    p.add_argument("--outcome", choices=("oracle", "hal", "zero"), default="zero")
    p.add_argument("--c", type=float, default=DEFAULT_BANDWIDTH_C)
    p.add_argument("--n-mc", type=int, default=20000)
    p.add_argument("--norm-mc", type=int, default=5)
    p.set_defaults(func=cmd_diagnose)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, FileNotFoundError, KeyError, TypeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
