"""Nuisance models: censoring hazards, transition hazards and plug-in outcome models."""

from __future__ import annotations

import json
from pathlib import Path

from ..sim import ObservedCohort, ScenarioConfig
from .exposure import Exposure, censoring_exposure, state_at, state_interval, transition_exposure
from .hal import CENSORING_BASIS, TRANSITION_BASIS, BasisConfig, fit_piecewise_lasso_hazard
from .hazards import (
    HazardModel,
    OracleHazard,
    ParametricHazard,
    PiecewiseLassoHazard,
    hazard_from_dict,
    oracle_transitions,
    zero_transitions,
)
from .parametric import ConvergenceError, fit_parametric_censoring
from .survival import DEFAULT_EPSILON, CensoringSurvival, censoring_survival

__all__ = [
    "BasisConfig",
    "CensoringSurvival",
    "ConvergenceError",
    "DEFAULT_EPSILON",
    "Exposure",
    "HazardModel",
    "OracleHazard",
    "ParametricHazard",
    "PiecewiseLassoHazard",
    "censoring_exposure",
    "censoring_survival",
    "fit_censoring",
    "fit_parametric_censoring",
    "fit_piecewise_lasso_hazard",
    "fit_transitions",
    "hazard_from_dict",
    "load_models",
    "oracle_transitions",
    "plug_in_outcome_model",
    "save_models",
    "state_at",
    "state_interval",
    "transition_exposure",
    "zero_transitions",
]

CENSORING_KINDS = ("oracle", "parametric", "hal", "zero")
OUTCOME_KINDS = ("oracle", "hal", "zero")


def fit_censoring(kind: str, cohort: ObservedCohort, config: ScenarioConfig, seed: int = 0) -> HazardModel:
    """Censoring hazard of the requested kind fitted on ``cohort``."""
    state = config.gamma.state
    if kind == "oracle":
        return OracleHazard(config, "gamma")
    if kind == "zero":
        return OracleHazard(config.without_censoring(), "gamma")
    if kind == "parametric":
        return fit_parametric_censoring(cohort, state=state)
    if kind == "hal":
        cfg = BasisConfig(**{**CENSORING_BASIS.__dict__, "seed": seed})
        return fit_piecewise_lasso_hazard(censoring_exposure(cohort, state), cfg, state=state)
    raise ValueError(f"unknown censoring kind {kind!r}; expected one of {CENSORING_KINDS}")


def fit_transitions(kind: str, cohort: ObservedCohort, config: ScenarioConfig, seed: int = 0):
    """(mu12, mu13, mu23) of the requested kind."""
    if kind == "oracle":
        return oracle_transitions(config)
    if kind == "zero":
        return zero_transitions(config)
    if kind == "hal":
        out = []
        for which, state in (("mu12", 1), ("mu13", 1), ("mu23", 2)):
            cfg = BasisConfig(**{**TRANSITION_BASIS[which].__dict__, "seed": seed})
            out.append(fit_piecewise_lasso_hazard(transition_exposure(cohort, which), cfg, state=state))
        return tuple(out)
    raise ValueError(f"unknown outcome kind {kind!r}; expected one of {OUTCOME_KINDS}")


def save_models(path, models: dict) -> None:
    """Write named hazard models to a JSON document."""
    Path(path).write_text(json.dumps({k: m.to_dict() for k, m in models.items()}, indent=2))


def load_models(path) -> dict:
    data = json.loads(Path(path).read_text())
    return {k: hazard_from_dict(v) for k, v in data.items()}


def plug_in_outcome_model(transitions, eta: float, grid_w, label: str = "", **solver):
    """Value tables E[Y | X^u] for fitted (mu12, mu13, mu23), solved by the value ODEs.

    ``solver`` is forwarded to ``truth.solve_value_tables`` (step, s_step).
    """
    from ..truth import solve_value_tables  # truth imports the hazard classes

    return solve_value_tables(tuple(transitions), eta, grid_w, label=label, **solver)
