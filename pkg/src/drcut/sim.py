"""Illness-death trajectories with covariate-dependent hazards and censoring.

States are 1 (healthy), 2 (ill) and 3 (dead); transitions are irreversible
(1->2, 1->3, 2->3). A censoring hazard is active only while the subject
occupies ``gamma.state``. Events are generated by Lewis' thinning with a
dominating rate recomputed on every segment.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numba
import numpy as np

__all__ = [
    "Mu12Params",
    "Mu13Params",
    "Mu23Params",
    "CensoringParams",
    "ScenarioConfig",
    "FullTrajectory",
    "ObservedSubject",
    "FullCohort",
    "ObservedCohort",
    "derive_seed",
    "simulate_subject",
    "simulate_cohort",
    "simulate_from_state",
    "observe",
    "observe_cohort",
    "outcome_duration",
]

UNAVAILABLE = None


@dataclass(frozen=True)
class Mu12Params:
    # rate * exp(cos_coef cos(pi w / 2) + late_coef 1{t > late_time} + w_coef w)
    rate: float = 0.3
    cos_coef: float = 0.15
    late_coef: float = 0.15
    late_time: float = 2.5
    w_coef: float = -0.05


@dataclass(frozen=True)
class Mu13Params:
    # rate * exp(sin_coef sin(pi w / 2) + t_coef t)
    rate: float = 0.1
    sin_coef: float = 0.3
    t_coef: float = 0.05


@dataclass(frozen=True)
class Mu23Params:
    # rate * exp(-slope * min(t - s, duration_cap) * poly(min(w, w_cap)))
    rate: float = 1.0
    slope: float = 0.75
    duration_cap: float = 3.0
    w_cap: float = 3.0
    poly: tuple[float, ...] = (1.07, 0.09, -0.024, -0.014, 0.001, 0.00065)


@dataclass(frozen=True)
class CensoringParams:
    # 1{Z(t) = state} * rate * exp(band_coef 1{band_lo <= w < band_hi})
    rate: float = 0.2
    band_coef: float = 0.6
    band_lo: float = -2.0
    band_hi: float = 2.0
    state: int = 1


@dataclass(frozen=True)
class ScenarioConfig:
    """Data-generating scenario. Defaults reproduce the reference simulation design."""

    eta: float = 5.0
    w_lo: float = -4.0
    w_hi: float = 4.0
    mu12: Mu12Params = field(default_factory=Mu12Params)
    mu13: Mu13Params = field(default_factory=Mu13Params)
    mu23: Mu23Params = field(default_factory=Mu23Params)
    gamma: CensoringParams = field(default_factory=CensoringParams)
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not self.w_lo < self.w_hi:
            raise ValueError(f"need w_lo < w_hi, got [{self.w_lo}, {self.w_hi}]")
        if len(self.mu23.poly) != 6:
            raise ValueError("mu23.poly must have 6 coefficients")
        for name in ("mu12", "mu13", "mu23", "gamma"):
            if getattr(self, name).rate < 0:
                raise ValueError(f"{name}.rate must be nonnegative")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        kinds = {"mu12": Mu12Params, "mu13": Mu13Params, "mu23": Mu23Params, "gamma": CensoringParams}
        for key, kind in kinds.items():
            if key in data:
                sub = dict(data[key])
                if "poly" in sub:
                    sub["poly"] = tuple(float(v) for v in sub["poly"])
                data[key] = kind(**sub)
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mu23"]["poly"] = list(out["mu23"]["poly"])
        return out

    def without_transitions(self) -> "ScenarioConfig":
        """Same scenario with every transition hazard set to zero."""
        return replace(
            self,
            mu12=replace(self.mu12, rate=0.0),
            mu13=replace(self.mu13, rate=0.0),
            mu23=replace(self.mu23, rate=0.0),
        )

    def without_censoring(self) -> "ScenarioConfig":
        return replace(self, gamma=replace(self.gamma, rate=0.0))

    def packed(self) -> np.ndarray:
        """Flat parameter vector consumed by the compiled kernels."""
        m12, m13, m23, g = self.mu12, self.mu13, self.mu23, self.gamma
        return np.array(
            [
                m12.rate, m12.cos_coef, m12.late_coef, m12.late_time, m12.w_coef,
                m13.rate, m13.sin_coef, m13.t_coef,
                m23.rate, m23.slope, m23.duration_cap, m23.w_cap, *m23.poly,
                g.rate, g.band_coef, g.band_lo, g.band_hi, float(g.state),
            ],
            dtype=np.float64,
        )


# Layout of ScenarioConfig.packed().
_P12, _P13, _P23, _PG = 0, 5, 8, 18


@numba.njit(cache=True)
def _mu12(p, t, w):
    late = 1.0 if t > p[_P12 + 3] else 0.0
    return p[_P12] * math.exp(
        p[_P12 + 1] * math.cos(math.pi * w / 2.0) + p[_P12 + 2] * late + p[_P12 + 4] * w
    )


@numba.njit(cache=True)
def _mu13(p, t, w):
    return p[_P13] * math.exp(p[_P13 + 1] * math.sin(math.pi * w / 2.0) + p[_P13 + 2] * t)


@numba.njit(cache=True)
def _mu23(p, t, s, w):
    wb = min(w, p[_P23 + 3])
    poly = 0.0
    for k in range(5, -1, -1):
        poly = poly * wb + p[_P23 + 4 + k]
    d = min(t - s, p[_P23 + 2])
    return p[_P23] * math.exp(-p[_P23 + 1] * d * poly)


@numba.njit(cache=True)
def _gamma(p, state, w):
    if state != int(p[_PG + 4]):
        return 0.0
    band = 1.0 if (p[_PG + 2] <= w and w < p[_PG + 3]) else 0.0
    return p[_PG] * math.exp(p[_PG + 1] * band)


@numba.njit(cache=True)
def _splitmix64(x):
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = x
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _derive_seed(master, index):
    h = _splitmix64(np.uint64(master))
    h = _splitmix64(h ^ np.uint64(index))
    return np.uint32(h & np.uint64(0xFFFFFFFF))


def derive_seed(master: int, index: int) -> int:
    """Per-subject seed from (master seed, subject index); independent of scheduling."""
    return int(_derive_seed(np.uint64(master), np.uint64(index)))


@numba.njit(cache=True)
def _run(p, eta, w, state, t, entry, censor_on):
    """Thinning from (state, t) with latest jump at ``entry``.

    Returns (t1, dest, t2, censor) where t1/dest describe the exit from
    state 1, t2 the 2->3 time; np.inf marks events that did not happen
    before eta.
    """
    t1 = np.inf
    dest = 0
    t2 = np.inf
    censor = np.inf
    tol = 1e-12
    while state != 3:
        # Dominating rate on [t, eta]; every hazard is monotone in time here.
        if state == 1:
            m12 = max(_mu12(p, t, w), _mu12(p, eta, w))
            m13 = max(_mu13(p, t, w), _mu13(p, eta, w))
            mtr = m12 + m13
        else:
            mtr = max(_mu23(p, t, entry, w), _mu23(p, eta, entry, w))
        mg = _gamma(p, state, w) if censor_on else 0.0
        bound = mtr + mg
        if bound <= 0.0:
            break
        while True:
            t = t - math.log(1.0 - np.random.random()) / bound
            if t >= eta:
                return t1, dest, t2, censor
            if state == 1:
                h12 = _mu12(p, t, w)
                h13 = _mu13(p, t, w)
                h23 = 0.0
            else:
                h12 = 0.0
                h13 = 0.0
                h23 = _mu23(p, t, entry, w)
            hg = _gamma(p, state, w) if censor_on else 0.0
            if h12 + h13 + h23 + hg > bound * (1.0 + tol):
                raise ValueError("thinning bound violated: hazard exceeds dominating rate")
            u = np.random.random() * bound
            if u < h12:
                t1 = t
                dest = 2
                state = 2
                entry = t
                break
            if u < h12 + h13:
                t1 = t
                dest = 3
                state = 3
                break
            if u < h12 + h13 + h23:
                t2 = t
                state = 3
                break
            if u < h12 + h13 + h23 + hg:
                censor = t
                censor_on = False
                break
    return t1, dest, t2, censor


@numba.njit(cache=True)
def _simulate_batch(p, eta, w_lo, w_hi, seeds, fixed_w, use_fixed_w):
    n = seeds.shape[0]
    w = np.empty(n)
    t1 = np.empty(n)
    dest = np.empty(n, dtype=np.int8)
    t2 = np.empty(n)
    cens = np.empty(n)
    for i in range(n):
        np.random.seed(seeds[i])
        if use_fixed_w:
            wi = fixed_w[i]
        else:
            wi = w_lo + (w_hi - w_lo) * np.random.random()
        a, b, c, d = _run(p, eta, wi, 1, 0.0, 0.0, True)
        w[i] = wi
        t1[i] = a
        dest[i] = b
        t2[i] = c
        cens[i] = d
    return w, t1, dest, t2, cens


@numba.njit(cache=True)
def _seeds_for(master, start, n):
    out = np.empty(n, dtype=np.uint32)
    for i in range(n):
        out[i] = _derive_seed(np.uint64(master), np.uint64(start + i))
    return out


@dataclass(frozen=True)
class FullTrajectory:
    """Uncensored path on [0, eta] plus the latent censoring time (inf if C >= eta)."""

    w: float
    jumps: tuple[tuple[float, int], ...]
    censor_time: float

    def __post_init__(self):
        times = [t for t, _ in self.jumps]
        states = [s for _, s in self.jumps]
        if not self.jumps or self.jumps[0] != (0.0, 1):
            raise ValueError("path must start at (0, state 1)")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("jump times must be strictly increasing")
        if tuple(states) not in {(1,), (1, 2), (1, 3), (1, 2, 3)}:
            raise ValueError(f"invalid illness-death path {states}")
        if not self.censor_time > 0:
            raise ValueError("censor_time must be positive")

    def state_at(self, t: float) -> int:
        state = 1
        for time, s in self.jumps:
            if time <= t:
                state = s
        return state


@dataclass(frozen=True)
class ObservedSubject:
    """Path observed up to c = min(C, eta)."""

    w: float
    jumps: tuple[tuple[float, int], ...]
    c: float
    censored: bool

    def state_at(self, t: float) -> int:
        state = 1
        for time, s in self.jumps:
            if time <= t:
                state = s
        return state


def _jumps(t1: float, dest: int, t2: float) -> tuple[tuple[float, int], ...]:
    jumps = [(0.0, 1)]
    if dest:
        jumps.append((float(t1), int(dest)))
        if dest == 2 and np.isfinite(t2):
            jumps.append((float(t2), 3))
    return tuple(jumps)


@dataclass
class FullCohort:
    """Array form of many FullTrajectory records (one entry per subject).

    ``t1`` is the exit time from state 1 and ``dest`` its destination
    (0 if the subject is still healthy at eta); ``t2`` is the 2->3 time.
    """

    w: np.ndarray
    t1: np.ndarray
    dest: np.ndarray
    t2: np.ndarray
    censor_time: np.ndarray
    eta: float

    def __len__(self) -> int:
        return len(self.w)

    def subject(self, i: int) -> FullTrajectory:
        return FullTrajectory(
            float(self.w[i]), _jumps(self.t1[i], self.dest[i], self.t2[i]), float(self.censor_time[i])
        )

    def outcome(self) -> np.ndarray:
        """Time spent ill before eta, for every subject."""
        ill = self.dest == 2
        out = np.zeros(len(self))
        out[ill] = np.minimum(self.t2[ill], self.eta) - self.t1[ill]
        return out

    def take(self, idx) -> "FullCohort":
        return FullCohort(self.w[idx], self.t1[idx], self.dest[idx], self.t2[idx], self.censor_time[idx], self.eta)


@dataclass
class ObservedCohort:
    """Array form of ObservedSubject records.

    Jumps after ``c`` are removed: ``t1``/``t2`` are inf and ``dest`` is 0
    for events that were not observed.
    """

    w: np.ndarray
    t1: np.ndarray
    dest: np.ndarray
    t2: np.ndarray
    c: np.ndarray
    censored: np.ndarray
    eta: float
    ids: np.ndarray | None = None

    def __post_init__(self):
        if self.ids is None:
            self.ids = np.arange(len(self.w))

    def __len__(self) -> int:
        return len(self.w)

    def subject(self, i: int) -> ObservedSubject:
        return ObservedSubject(
            float(self.w[i]), _jumps(self.t1[i], self.dest[i], self.t2[i]), float(self.c[i]), bool(self.censored[i])
        )

    def take(self, idx) -> "ObservedCohort":
        return ObservedCohort(
            self.w[idx], self.t1[idx], self.dest[idx], self.t2[idx], self.c[idx],
            self.censored[idx], self.eta, self.ids[idx],
        )

    def outcome(self) -> np.ndarray:
        """Illness duration; NaN where it is not identified (censored)."""
        ill = self.dest == 2
        out = np.zeros(len(self))
        out[ill] = np.minimum(self.t2[ill], self.eta) - self.t1[ill]
        out[self.censored] = np.nan
        return out

    def state_exit(self) -> np.ndarray:
        """End of the observed state-1 sojourn: min(t1, c)."""
        return np.minimum(self.t1, self.c)

    @classmethod
    def from_subjects(cls, subjects: Sequence[ObservedSubject], eta: float, ids=None) -> "ObservedCohort":
        n = len(subjects)
        t1 = np.full(n, np.inf)
        dest = np.zeros(n, dtype=np.int8)
        t2 = np.full(n, np.inf)
        for i, s in enumerate(subjects):
            for time, state in s.jumps[1:]:
                if state == 3 and dest[i] == 2:
                    t2[i] = time
                else:
                    t1[i], dest[i] = time, state
        return cls(
            np.array([s.w for s in subjects], dtype=float), t1, dest, t2,
            np.array([s.c for s in subjects], dtype=float),
            np.array([s.censored for s in subjects], dtype=bool), eta,
            None if ids is None else np.asarray(ids),
        )


def simulate_subject(config: ScenarioConfig, seed: int, w: float | None = None) -> FullTrajectory:
    """One full trajectory from its own RNG stream.

    ``w`` fixes the covariate; otherwise it is drawn uniformly on
    [w_lo, w_hi] from the same stream.
    """
    fixed = np.array([0.0 if w is None else float(w)])
    out = _simulate_batch(
        config.packed(), config.eta, config.w_lo, config.w_hi,
        np.array([seed], dtype=np.uint32), fixed, w is not None,
    )
    wi, t1, dest, t2, cens = (a[0] for a in out)
    return FullTrajectory(float(wi), _jumps(t1, dest, t2), float(cens))


def simulate_cohort(
    config: ScenarioConfig, n: int, seed: int | None = None, w=None, start: int = 0
) -> FullCohort:
    """Simulate ``n`` subjects; subject ``i`` uses ``derive_seed(seed, start + i)``.

    ``w`` may be a scalar or length-n array to condition on the covariate.
    """
    seed = config.seed if seed is None else seed
    seeds = _seeds_for(np.uint64(seed), start, n)
    if w is None:
        fixed, use = np.zeros(n), False
    else:
        fixed, use = np.broadcast_to(np.asarray(w, dtype=float), (n,)).copy(), True
    wv, t1, dest, t2, cens = _simulate_batch(
        config.packed(), config.eta, config.w_lo, config.w_hi, seeds, fixed, use
    )
    return FullCohort(wv, t1, dest, t2, cens, config.eta)


@numba.njit(cache=True)
def _forward_batch(p, eta, w, state, t, entry, seeds):
    n = seeds.shape[0]
    y = np.empty(n)
    for i in range(n):
        np.random.seed(seeds[i])
        t1, dest, t2, _ = _run(p, eta, w, state, t, entry, False)
        if state == 2:
            y[i] = min(t2, eta) - t
        elif dest == 2:
            y[i] = min(t2, eta) - t1
        else:
            y[i] = 0.0
    return y


def simulate_from_state(
    config: ScenarioConfig, n: int, seed: int, w: float, state: int, t: float, entry: float
) -> np.ndarray:
    """Future illness time on (t, eta) for ``n`` uncensored subjects currently in ``state``.

    ``entry`` is the latest jump time (only used in state 2).
    """
    if state == 3:
        return np.zeros(n)
    seeds = _seeds_for(np.uint64(seed), 0, n)
    return _forward_batch(config.packed(), config.eta, float(w), int(state), float(t), float(entry), seeds)


def observe(full: FullTrajectory, eta: float) -> ObservedSubject:
    c = min(full.censor_time, eta)
    jumps = tuple((t, s) for t, s in full.jumps if t <= c)
    return ObservedSubject(full.w, jumps, float(c), bool(full.censor_time < eta))


def observe_cohort(full: FullCohort) -> ObservedCohort:
    eta = full.eta
    c = np.minimum(full.censor_time, eta)
    seen1 = full.t1 <= c
    seen2 = full.t2 <= c
    return ObservedCohort(
        full.w.copy(),
        np.where(seen1, full.t1, np.inf),
        np.where(seen1, full.dest, 0).astype(np.int8),
        np.where(seen2, full.t2, np.inf),
        c,
        full.censor_time < eta,
        eta,
    )


def outcome_duration(subject: FullTrajectory | ObservedSubject, eta: float) -> float | None:
    """Time spent in state 2 before eta; None when censoring hides it."""
    if isinstance(subject, ObservedSubject) and subject.censored:
        return UNAVAILABLE
    total = 0.0
    jumps = list(subject.jumps) + [(eta, -1)]
    for (t0, s), (t_next, _) in zip(jumps, jumps[1:]):
        if s == 2:
            total += min(t_next, eta) - min(t0, eta)
    return total


_EVENT_NAMES = {2: "ill", 3: "dead"}
_EVENT_STATES = {"ill": 2, "dead": 3}


def write_cohort_csv(path, cohort: ObservedCohort) -> None:
    """Long format: one row per observed jump plus a closing ``censored`` or ``end`` row."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["id", "w", "time", "event"])
        for i in range(len(cohort)):
            sid, w = int(cohort.ids[i]), repr(float(cohort.w[i]))
            for t, s in _jumps(cohort.t1[i], cohort.dest[i], cohort.t2[i])[1:]:
                out.writerow([sid, w, repr(float(t)), _EVENT_NAMES[s]])
            out.writerow([sid, w, repr(float(cohort.c[i])), "censored" if cohort.censored[i] else "end"])


def read_cohort_csv(path, eta: float) -> ObservedCohort:
    """Inverse of write_cohort_csv; malformed rows raise ValueError naming file and line."""
    subjects, ids = [], []
    current, jumps, w = None, [], None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "w", "time", "event"]:
            raise ValueError(f"{path}:1: expected header id,w,time,event, got {header}")
        for line, row in enumerate(reader, start=2):
            try:
                sid, wv, t, ev = int(row[0]), float(row[1]), float(row[2]), row[3]
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{line}: malformed row {row!r}") from exc
            if current is None:
                current, jumps, w = sid, [(0.0, 1)], wv
            elif sid != current:
                raise ValueError(f"{path}:{line}: subject {current} has no closing row")
            if ev in _EVENT_STATES:
                jumps.append((t, _EVENT_STATES[ev]))
            elif ev in ("censored", "end"):
                censored = ev == "censored"
                if not censored and abs(t - eta) > 1e-9:
                    raise ValueError(f"{path}:{line}: follow-up ends at {t}, expected eta={eta}")
                try:
                    subjects.append(ObservedSubject(w, tuple(jumps), t, censored))
                except ValueError as exc:
                    raise ValueError(f"{path}:{line}: {exc}") from exc
                ids.append(sid)
                current = None
            else:
                raise ValueError(f"{path}:{line}: unknown event {ev!r}")
    if current is not None:
        raise ValueError(f"{path}: subject {current} has no closing row")
    return ObservedCohort.from_subjects(subjects, eta, ids=ids)
