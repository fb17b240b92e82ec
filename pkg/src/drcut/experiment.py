"""Replication experiments: curves, L2 errors and confidence-interval coverage."""

from __future__ import annotations

import csv
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml
from scipy.stats import norm

from .crossfit import DEFAULT_BANDWIDTH_C, Pipeline, crossfit_estimate, oracle_tables, w_grid
from .nuisance import fit_transitions, plug_in_outcome_model
from .sim import ScenarioConfig, derive_seed, observe_cohort, simulate_cohort
from .truth import marginal_truth

ESTIMATORS = {
    "ipcw-oracle": Pipeline(cens="oracle", variant="ipcw"),
    "ipcw-hal": Pipeline(cens="hal", variant="ipcw"),
    "ipcw-misspec": Pipeline(cens="parametric", variant="ipcw"),
    "dr-oracle": Pipeline(cens="oracle", outcome="oracle"),
    "dr-hal": Pipeline(cens="hal", outcome="hal"),
    "dr-misspec": Pipeline(cens="parametric", outcome="hal"),
    "dr-hal-zero": Pipeline(cens="hal", outcome="zero"),
}
PLUGIN = "plugin-lite"
LEVELS = (0.90, 0.95, 0.99)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    n: tuple[int, ...] = (1000, 5000, 10000)
    reps: int = 200
    estimators: tuple[str, ...] = ("dr-oracle", "dr-hal", "ipcw-misspec")
    c: float = DEFAULT_BANDWIDTH_C
    k: int = 2
    grid_points: int = 33
    seed: int = 0
    workers: int = 1
    levels: tuple[float, ...] = LEVELS

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("replication count must be at least 1")
        if not self.estimators:
            raise ValueError("estimator menu is empty")
        unknown = [e for e in self.estimators if e not in ESTIMATORS and e != PLUGIN]
        if unknown:
            raise ValueError(f"unknown estimators {unknown}; choose from {sorted(ESTIMATORS) + [PLUGIN]}")
        if self.k < 2:
            raise ValueError("K must be at least 2")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.scenario.w_lo, self.scenario.w_hi, self.grid_points)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        scenario = ScenarioConfig.from_dict(data.pop("scenario", {}))
        exp = dict(data.pop("experiment", {}))
        if data:
            raise ValueError(f"unknown top-level config keys: {sorted(data)}")
        for key in ("n", "estimators", "levels"):
            if key in exp:
                exp[key] = tuple(exp[key]) if isinstance(exp[key], (list, tuple)) else (exp[key],)
        unknown = set(exp) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(scenario=scenario, **exp)

    def to_dict(self) -> dict:
        exp = asdict(self)
        exp.pop("scenario")
        for key in ("n", "estimators", "levels"):
            exp[key] = list(exp[key])
        return {"scenario": self.scenario.to_dict(), "experiment": exp}


def load_config(path) -> dict:
    """Parse a YAML config, reporting the file and line of syntax errors."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        raise ValueError(f"{where}: malformed config: {getattr(exc, 'problem', exc)}") from exc
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return data


def l2_error(curve_est, curve_true, grid) -> float:
    """L2 distance of two curves on a grid by the trapezoid rule."""
    curve_est, curve_true, grid = (np.asarray(x, dtype=float) for x in (curve_est, curve_true, grid))
    if not (curve_est.shape == curve_true.shape == grid.shape):
        raise ValueError(f"grid mismatch: {curve_est.shape}, {curve_true.shape}, {grid.shape}")
    return float(np.sqrt(np.trapezoid((curve_est - curve_true) ** 2, grid)))


def estimate_curve(name: str, cohort, config: ExperimentConfig, grid, seed: int):
    """(estimate, se, fold estimates) of one estimator on one cohort."""
    if name == PLUGIN:
        tables = plug_in_outcome_model(fit_transitions("hal", cohort, config.scenario, seed), cohort.eta, grid)
        est = marginal_truth(grid, tables)
        return est, np.full(len(grid), np.nan), est[None, :]
    pipeline = replace(ESTIMATORS[name], c=config.c)
    res = crossfit_estimate(cohort, config.k, grid, pipeline, config.scenario, seed=seed)
    return res.estimate, res.se, res.fold_estimates


def _one_replication(args):
    config, n, rep = args
    seed = derive_seed(derive_seed(config.seed, n), rep)
    grid = config.grid
    truth = marginal_truth(grid, oracle_tables(config.scenario))
    cohort = observe_cohort(simulate_cohort(config.scenario, n, seed=seed))
    out = []
    for name in config.estimators:
        rec = {"n": n, "rep": rep, "estimator": name, "seed": int(seed)}
        try:
            est, se, folds = estimate_curve(name, cohort, config, grid, seed % (2**31))
            rec.update(
                estimate=est.tolist(), se=se.tolist(), fold_estimates=folds.tolist(),
                l2=l2_error(est, truth, grid), error=None,
            )
        except Exception as exc:  # recorded and counted, the run continues
            rec.update(error=f"{type(exc).__name__}: {exc}", traceback=traceback.format_exc(limit=3))
        out.append(rec)
    return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    truth: np.ndarray

    @property
    def grid(self) -> np.ndarray:
        return self.config.grid

    def ok(self, estimator: str, n: int) -> list:
        return [r for r in self.records if r["estimator"] == estimator and r["n"] == n and r["error"] is None]

    @property
    def n_failures(self) -> int:
        return sum(r["error"] is not None for r in self.records)

    def l2(self, estimator: str, n: int) -> np.ndarray:
        return np.array([r["l2"] for r in self.ok(estimator, n)])

    def at(self, estimator: str, n: int, w0: float, key: str = "estimate") -> np.ndarray:
        j = int(np.argmin(np.abs(self.grid - w0)))
        if abs(self.grid[j] - w0) > 1e-9:
            raise ValueError(f"w0={w0} is not a grid point")
        if key == "single":
            return np.array([r["fold_estimates"][0][j] for r in self.ok(estimator, n)])
        return np.array([r[key][j] for r in self.ok(estimator, n)])

    def coverage(self, estimator: str, n: int, level: float) -> np.ndarray:
        rows = self.ok(estimator, n)
        if not rows:
            return np.full(len(self.grid), np.nan)
        est = np.array([r["estimate"] for r in rows])
        se = np.array([r["se"] for r in rows])
        z = norm.ppf(0.5 + level / 2)
        return np.mean(np.abs(est - self.truth) <= z * se, axis=0)

    def summary(self) -> dict:
        out = {"config": self.config.to_dict(), "failures": self.n_failures, "metrics": []}
        for n in self.config.n:
            for name in self.config.estimators:
                l2 = self.l2(name, n)
                row = {"n": n, "estimator": name, "reps_ok": int(len(l2)),
                       "l2_mean": float(l2.mean()) if len(l2) else None,
                       "l2_sd": float(l2.std(ddof=1)) if len(l2) > 1 else None}
                if name != PLUGIN:
                    row["mean_coverage"] = {str(lv): float(np.nanmean(self.coverage(name, n, lv))) for lv in self.config.levels}
                out["metrics"].append(row)
        return out

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2))
        with open(out / "replications.jsonl", "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r) + "\n")
        with open(out / "curves.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["n", "rep", "estimator", "w", "estimate", "se", "truth"])
            for r in self.records:
                if r["error"] is None:
                    for w, e, s, t in zip(self.grid, r["estimate"], r["se"], self.truth):
                        wr.writerow([r["n"], r["rep"], r["estimator"], w, e, s, t])
        with open(out / "l2.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["n", "rep", "estimator", "l2"])
            for r in self.records:
                if r["error"] is None:
                    wr.writerow([r["n"], r["rep"], r["estimator"], r["l2"]])
        with open(out / "coverage.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["n", "estimator", "level", "w", "coverage"])
            for n in self.config.n:
                for name in self.config.estimators:
                    if name == PLUGIN:
                        continue
                    for lv in self.config.levels:
                        for w, c in zip(self.grid, self.coverage(name, n, lv)):
                            wr.writerow([n, name, lv, w, c])


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run every (n, replication) task; results are ordered and schedule independent."""
    tasks = [(config, n, rep) for n in config.n for rep in range(config.reps)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            chunks = list(pool.map(_one_replication, tasks))
    else:
        chunks = [_one_replication(t) for t in tasks]
    records = [r for chunk in chunks for r in chunk]
    truth = marginal_truth(config.grid, oracle_tables(config.scenario))
    result = ExperimentResult(config, records, truth)
    if out_dir is not None:
        result.write(out_dir)
    return result


def pilot_bandwidth(scenario: ScenarioConfig, n: int = 5000, reps: int = 30, cs=(4, 6, 8, 10, 12),
                    k: int = 2, grid_points: int = 33, seed: int = 99) -> dict:
    """Mean L2 error of the oracle DR curve for each bandwidth constant.

    Returns the table and the minimizing constant; run on seeds disjoint
    from the acceptance experiments.
    """
    table = {}
    for c in cs:
        cfg = ExperimentConfig(scenario=scenario, n=(n,), reps=reps, estimators=("dr-oracle",), c=float(c),
                               k=k, grid_points=grid_points, seed=seed)
        table[float(c)] = float(run_experiment(cfg).l2("dr-oracle", n).mean())
    return {"l2_by_c": table, "best_c": min(table, key=table.get), "n": n, "reps": reps}


__all__ = [
    "ESTIMATORS",
    "ExperimentConfig",
    "ExperimentResult",
    "PLUGIN",
    "estimate_curve",
    "l2_error",
    "load_config",
    "pilot_bandwidth",
    "run_experiment",
    "w_grid",
]
