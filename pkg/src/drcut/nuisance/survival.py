"""Censoring survival P(C > u | X) along observed paths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..sim import FullTrajectory, ObservedCohort, ObservedSubject
from .exposure import state_interval
from .hazards import HazardModel

DEFAULT_EPSILON = 0.01


@dataclass(frozen=True)
class CensoringSurvival:
    """exp(-cumulative censoring hazard), floored at ``epsilon``."""

    model: HazardModel
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")

    def cumulative(self, t1, dest, t2, w, u):
        """Integrated censoring hazard on [0, u] (unclamped)."""
        start, end, entry = state_interval(t1, dest, t2, self.model.state)
        u = np.asarray(u, dtype=float)
        hi = np.minimum(u, end)
        active = hi > start
        lo = np.where(active, start, 0.0)
        hi = np.where(active, hi, 0.0)
        ent = np.where(np.isfinite(entry), entry, 0.0)
        return np.where(active, self.model.cumulative(lo, hi, w, ent), 0.0)

    def survival(self, t1, dest, t2, w, u):
        return np.clip(np.exp(-self.cumulative(t1, dest, t2, w, u)), self.epsilon, 1.0)

    def hazard(self, t1, dest, t2, w, u):
        """Censoring hazard at u given the path (zero outside the firing state)."""
        start, end, entry = state_interval(t1, dest, t2, self.model.state)
        u = np.asarray(u, dtype=float)
        active = (u >= start) & (u < end)
        ent = np.where(np.isfinite(entry), entry, 0.0)
        return np.where(active, self.model.rate(u, w, u - ent), 0.0)

    def for_cohort(self, cohort: ObservedCohort, u):
        return self.survival(cohort.t1, cohort.dest, cohort.t2, cohort.w, u)


def _path_arrays(subject: ObservedSubject | FullTrajectory):
    t1, dest, t2 = np.inf, 0, np.inf
    for time, state in subject.jumps[1:]:
        if state == 3 and dest == 2:
            t2 = time
        else:
            t1, dest = time, state
    return t1, dest, t2


def censoring_survival(model: HazardModel, subject, u: float, epsilon: float = DEFAULT_EPSILON) -> float:
    """P(C > u | X) for one subject, u in [0, eta]."""
    t1, dest, t2 = _path_arrays(subject)
    return float(CensoringSurvival(model, epsilon).survival(t1, dest, t2, subject.w, u))
