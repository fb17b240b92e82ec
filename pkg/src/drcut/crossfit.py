"""Sample splitting and K-fold cross-fitting of the two-step estimator.

Nuisances are fitted on the data outside a fold, pseudo-outcomes are
built for the fold's subjects and regressed on W with local linear
smoothing; fold estimates are averaged (DML1) and the cross-fitted SE is
mean(SE_k) / sqrt(K).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from .nuisance import fit_censoring, fit_transitions, plug_in_outcome_model
from .nuisance.exposure import state_interval
from .nuisance.hazards import OracleHazard, oracle_transitions
from .nuisance.survival import DEFAULT_EPSILON, CensoringSurvival
from .pseudo import DEFAULT_QUAD_STEP, _cuts, dr_values, ipcw_values, path_integral
from .sim import ObservedCohort, ScenarioConfig, simulate_cohort
from .smooth import SmootherError, bandwidth_rule, local_linear_fit
from .truth import ValueTables

CENS_KINDS = ("oracle", "parametric", "hal", "zero")
OUTCOME_KINDS = ("oracle", "hal", "zero")
DEFAULT_BANDWIDTH_C = 8.0


class FoldError(RuntimeError):
    pass


@dataclass(frozen=True)
class Pipeline:
    """One estimator: nuisance kinds, pseudo-outcome variant and smoother settings."""

    cens: str = "oracle"
    outcome: str = "oracle"
    variant: str = "dr"
    c: float = DEFAULT_BANDWIDTH_C
    kernel: str = "epanechnikov"
    epsilon: float = DEFAULT_EPSILON
    quad_step: float = DEFAULT_QUAD_STEP
    w_step: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.cens not in CENS_KINDS:
            raise ValueError(f"unknown censoring kind {self.cens!r}")
        if self.outcome not in OUTCOME_KINDS:
            raise ValueError(f"unknown outcome kind {self.outcome!r}")
        if self.variant not in ("dr", "ipcw"):
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def needs_data(self) -> bool:
        return self.cens in ("parametric", "hal") or (self.variant == "dr" and self.outcome == "hal")


@dataclass
class Nuisances:
    cens: CensoringSurvival
    outcome: ValueTables | None


@lru_cache(maxsize=8)
def _fixed_tables(config_json: str, kind: str, w_step: float) -> ValueTables:
    config = ScenarioConfig.from_dict(json.loads(config_json))
    transitions = fit_transitions(kind, None, config)
    return plug_in_outcome_model(transitions, config.eta, w_grid(config, w_step), label=kind)


def w_grid(config: ScenarioConfig, step: float) -> np.ndarray:
    n = int(round((config.w_hi - config.w_lo) / step))
    return np.linspace(config.w_lo, config.w_hi, n + 1)


def fit_nuisances(pipeline: Pipeline, train: ObservedCohort | None, config: ScenarioConfig, seed: int = 0) -> Nuisances:
    """Censoring survival and (for DR) outcome tables; data-free kinds ignore ``train``."""
    cens = CensoringSurvival(fit_censoring(pipeline.cens, train, config, seed), pipeline.epsilon)
    outcome = None
    if pipeline.variant == "dr":
        if pipeline.outcome == "hal":
            transitions = fit_transitions("hal", train, config, seed)
            outcome = plug_in_outcome_model(transitions, config.eta, w_grid(config, pipeline.w_step), label="hal")
        else:
            outcome = _fixed_tables(json.dumps(config.to_dict(), sort_keys=True), pipeline.outcome, pipeline.w_step)
    return Nuisances(cens, outcome)


def pseudo_values(pipeline: Pipeline, nuis: Nuisances, cohort: ObservedCohort) -> np.ndarray:
    if pipeline.variant == "ipcw":
        return ipcw_values(cohort, nuis.cens)
    return dr_values(cohort, nuis.cens, nuis.outcome, pipeline.quad_step)


def make_folds(n: int, k: int, seed: int) -> np.ndarray:
    """Fold label per subject; sizes differ by at most one."""
    if k < 2:
        raise ValueError("K must be at least 2")
    if n < k:
        raise ValueError(f"cannot split {n} subjects into {k} folds")
    rng = np.random.default_rng(seed)
    labels = np.empty(n, dtype=np.int64)
    labels[rng.permutation(n)] = np.arange(n) % k
    return labels


@dataclass
class CrossFitResult:
    """Fold estimates and their DML1 aggregate at each evaluation point."""

    w0: np.ndarray
    fold_estimates: np.ndarray
    fold_ses: np.ndarray
    k: int
    folds: np.ndarray = field(repr=False)
    h: float = 0.0

    @property
    def estimate(self) -> np.ndarray:
        return self.fold_estimates.mean(axis=0)

    @property
    def se(self) -> np.ndarray:
        return self.fold_ses.mean(axis=0) / np.sqrt(self.k)

    def to_dict(self) -> dict:
        return {
            "w0": self.w0.tolist(),
            "estimate": self.estimate.tolist(),
            "se": self.se.tolist(),
            "fold_estimates": self.fold_estimates.tolist(),
            "fold_ses": self.fold_ses.tolist(),
            "k": self.k,
            "h": self.h,
            "fold_sizes": np.bincount(self.folds, minlength=self.k).tolist(),
        }


def _fold_fit(pipeline, config, data, folds, k, w0, h, seed):
    test = folds == k
    train = data.take(~test) if pipeline.needs_data else None
    try:
        nuis = fit_nuisances(pipeline, train, config, seed)
    except Exception as exc:  # annotate with the fold, keep the original type visible
        raise FoldError(f"fold {k}: nuisance fit failed: {type(exc).__name__}: {exc}") from exc
    part = data.take(test)
    y = pseudo_values(pipeline, nuis, part)
    est, se = np.empty(len(w0)), np.empty(len(w0))
    for j, w in enumerate(w0):
        try:
            fit = local_linear_fit(part.w, y, float(w), h, pipeline.kernel)
        except SmootherError as exc:
            raise FoldError(f"fold {k}: {exc}") from exc
        est[j], se[j] = fit.estimate, fit.se
    return est, se


def crossfit_estimate(data: ObservedCohort, k: int, w0, pipeline: Pipeline, config: ScenarioConfig,
                      seed: int = 0) -> CrossFitResult:
    """K-fold cross-fitted estimate at w0 (scalar or grid); bandwidth from n / K."""
    w0 = np.atleast_1d(np.asarray(w0, dtype=float))
    folds = make_folds(len(data), k, seed)
    h = bandwidth_rule(len(data) // k, pipeline.c)
    est = np.empty((k, len(w0)))
    se = np.empty((k, len(w0)))
    for j in range(k):
        est[j], se[j] = _fold_fit(pipeline, config, data, folds, j, w0, h, seed * 1000 + j)
    return CrossFitResult(w0, est, se, k, folds, h)


@dataclass(frozen=True)
class SplitEstimate:
    w0: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    h: float


def sample_split_estimate(data: ObservedCohort, split_seed: int, w0, pipeline: Pipeline,
                          config: ScenarioConfig) -> SplitEstimate:
    """Single split: nuisances from one half, regression on the other.

    The halves are the two folds of ``crossfit_estimate`` with K = 2 and the
    same seed, and the regression half is fold 0, so the single-split
    estimate equals that run's first fold estimate.
    """
    w0 = np.atleast_1d(np.asarray(w0, dtype=float))
    folds = make_folds(len(data), 2, split_seed)
    h = bandwidth_rule(len(data) // 2, pipeline.c)
    est, se = _fold_fit(pipeline, config, data, folds, 0, w0, h, split_seed * 1000)
    return SplitEstimate(w0, est, se, h)


@dataclass(frozen=True)
class ErrorNorms:
    outcome: float
    hazard: float
    n_points: int
    n_mc: int


def nuisance_error_norms(nuis: Nuisances, truth: ValueTables, config: ScenarioConfig, w, weights,
                         n_mc: int = 20, seed: int = 0, quad_step: float = 0.02) -> ErrorNorms:
    """|p|-weighted empirical L2 errors of the outcome model and censoring hazard.

    For each covariate value W_i with nonzero weight, ``n_mc`` full paths are
    simulated at W_i and the squared errors are integrated over [0, eta)
    along each path; the per-point means are averaged with weights |p_i|.
    """
    w = np.asarray(w, dtype=float)
    p = np.abs(np.asarray(weights, dtype=float))
    keep = p > 0
    w, p = w[keep], p[keep] / p[keep].sum()
    reps = np.repeat(w, n_mc)
    full = simulate_cohort(config, len(reps), seed=seed, w=reps)
    t1, dest, t2 = full.t1, full.dest, full.t2
    eta = full.eta
    true = CensoringSurvival(OracleHazard(config, "gamma"), epsilon=1e-300)
    zeros = np.zeros(len(reps))
    path_cuts = np.column_stack([t1, t2])

    out_err = np.zeros(len(reps))
    if nuis.outcome is not None:
        def f_out(r, u):
            a = (t1[r], dest[r], t2[r], reps[r], u)
            return (nuis.outcome.expected_outcome(*a) - truth.expected_outcome(*a)) ** 2

        out_err = path_integral(f_out, zeros, np.full(len(reps), eta), path_cuts, quad_step)

    haz_err = np.zeros(len(reps))
    for state in {true.model.state, nuis.cens.model.state}:
        start, end, entry = state_interval(t1, dest, t2, state)
        hi = np.minimum(end, eta)
        ok = hi > start
        ent = np.where(np.isfinite(entry), entry, 0.0)

        def f_haz(r, u):
            a = (t1[r], dest[r], t2[r], reps[r], u)
            g_hat = np.where(nuis.cens.model.state == state, nuis.cens.hazard(*a), 0.0)
            g = np.where(true.model.state == state, true.hazard(*a), 0.0)
            return (g_hat - g) ** 2

        cuts = np.concatenate([_cuts(nuis.cens.model, ent), _cuts(true.model, ent)], axis=1)
        haz_err += path_integral(f_haz, np.where(ok, start, 0.0), np.where(ok, hi, 0.0), cuts, quad_step)

    per_point = lambda e: e.reshape(len(w), n_mc).mean(axis=1)  # noqa: E731
    return ErrorNorms(float(np.sqrt(p @ per_point(out_err))), float(np.sqrt(p @ per_point(haz_err))), len(w), n_mc)


def oracle_tables(config: ScenarioConfig, w_step: float = 0.1) -> ValueTables:
    return _fixed_tables(json.dumps(config.to_dict(), sort_keys=True), "oracle", w_step)


def pipeline_from_dict(data: dict) -> Pipeline:
    return replace(Pipeline(), **data)


def pipeline_to_dict(p: Pipeline) -> dict:
    return asdict(p)


__all__ = [
    "CrossFitResult",
    "ErrorNorms",
    "FoldError",
    "Nuisances",
    "Pipeline",
    "SplitEstimate",
    "crossfit_estimate",
    "fit_nuisances",
    "make_folds",
    "nuisance_error_norms",
    "oracle_tables",
    "oracle_transitions",
    "pseudo_values",
    "sample_split_estimate",
    "w_grid",
]
