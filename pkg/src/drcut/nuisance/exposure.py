"""At-risk intervals and event indicators extracted from observed cohorts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..sim import ObservedCohort


@dataclass
class Exposure:
    """One at-risk interval [start, stop) per row, with duration measured from ``entry``."""

    start: np.ndarray
    stop: np.ndarray
    entry: np.ndarray
    w: np.ndarray
    event: np.ndarray
    subject: np.ndarray

    def __len__(self):
        return len(self.start)

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    @property
    def total_time(self) -> float:
        return float(np.sum(self.stop - self.start))

    def take(self, mask) -> "Exposure":
        return Exposure(*(getattr(self, f)[mask] for f in ("start", "stop", "entry", "w", "event", "subject")))


def state_interval(t1, dest, t2, state: int):
    """(start, end, entry) of the sojourn in ``state`` on the full or observed path.

    Subjects that never occupy the state get start = end = inf.
    """
    t1 = np.asarray(t1, dtype=float)
    dest = np.asarray(dest)
    t2 = np.asarray(t2, dtype=float)
    inf = np.full(t1.shape, np.inf)
    if state == 1:
        return np.zeros(t1.shape), t1, np.zeros(t1.shape)
    if state == 2:
        ill = dest == 2
        return np.where(ill, t1, inf), np.where(ill, t2, inf), np.where(ill, t1, inf)
    if state == 3:
        start = np.where(dest == 3, t1, np.where(dest == 2, t2, inf))
        return start, inf, start
    raise ValueError(f"unknown state {state}")


def state_at(t1, dest, t2, u):
    """State occupied at time u (left-continuous at jumps is not needed: jumps are a.s. distinct from u)."""
    u = np.asarray(u, dtype=float)
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    dest = np.asarray(dest)
    s = np.ones(np.broadcast(u, t1).shape, dtype=np.int8)
    s = np.where(u >= t1, np.where(dest == 3, 3, 2), s)
    s = np.where((dest == 2) & (u >= t2), 3, s)
    return s


def censoring_exposure(cohort: ObservedCohort, state: int = 1) -> Exposure:
    start, end, entry = state_interval(cohort.t1, cohort.dest, cohort.t2, state)
    stop = np.minimum(end, cohort.c)
    keep = start < stop
    in_state = state_at(cohort.t1, cohort.dest, cohort.t2, cohort.c) == state
    event = cohort.censored & in_state & (cohort.c < end)
    idx = np.arange(len(cohort))
    return Exposure(start[keep], stop[keep], entry[keep], cohort.w[keep], event[keep], idx[keep])


def transition_exposure(cohort: ObservedCohort, which: str) -> Exposure:
    idx = np.arange(len(cohort))
    if which in ("mu12", "mu13"):
        stop = np.minimum(cohort.t1, cohort.c)
        event = cohort.dest == (2 if which == "mu12" else 3)
        keep = stop > 0
        return Exposure(np.zeros(keep.sum()), stop[keep], np.zeros(keep.sum()), cohort.w[keep], event[keep], idx[keep])
    if which == "mu23":
        keep = (cohort.dest == 2) & (cohort.t1 < cohort.c)
        stop = np.minimum(cohort.t2, cohort.c)[keep]
        return Exposure(
            cohort.t1[keep], stop, cohort.t1[keep], cohort.w[keep],
            np.isfinite(cohort.t2[keep]), idx[keep],
        )
    raise ValueError(f"unknown transition {which!r}")
