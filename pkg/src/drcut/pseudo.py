"""Censoring unbiased pseudo-outcomes: IPCW, doubly robust and treatment augmented.

For an observed subject with censoring survival S(u) = P(C > u | X), hazard
gamma(u | X) and a working model E2[Y | X^u], the doubly robust value is

    Y* = 1(C >= eta) Y / S(eta)
         + 1(C < eta) E2[Y | X^C] / S(C)
         - int_0^{C ^ eta} E2[Y | X^u] gamma(u | X) / S(u) du.

The integral only runs where the censoring hazard is active (its firing
state) and is evaluated by composite Simpson on pieces between the
hazard's breakpoints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nuisance.exposure import state_interval
from .nuisance.hazards import HazardModel, OracleHazard
from .nuisance.survival import CensoringSurvival
from .sim import ObservedCohort, ObservedSubject, ScenarioConfig, simulate_cohort
from .truth import ValueTables

VARIANTS = ("ipcw", "dr", "oracle-dr", "causal")
DEFAULT_QUAD_STEP = 0.01
_CHUNK_NODES = 2_000_000
_EDGE = 1e-10


@dataclass(frozen=True)
class PseudoOutcome:
    id: int
    w: float
    value: float
    variant: str
    cens_kind: str = ""
    outcome_kind: str = ""

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not np.isfinite(self.value):
            raise ValueError(f"non-finite pseudo-outcome for subject {self.id}")


@dataclass
class PseudoOutcomes:
    """Column form of many PseudoOutcome records sharing one provenance."""

    ids: np.ndarray
    w: np.ndarray
    value: np.ndarray
    variant: str
    cens_kind: str = ""
    outcome_kind: str = ""

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        bad = ~np.isfinite(self.value)
        if bad.any():
            raise ValueError(f"non-finite pseudo-outcome for subject {self.ids[np.argmax(bad)]}")

    def __len__(self):
        return len(self.value)

    def __getitem__(self, i) -> PseudoOutcome:
        return PseudoOutcome(int(self.ids[i]), float(self.w[i]), float(self.value[i]),
                             self.variant, self.cens_kind, self.outcome_kind)

    def take(self, idx) -> "PseudoOutcomes":
        return PseudoOutcomes(self.ids[idx], self.w[idx], self.value[idx], self.variant, self.cens_kind, self.outcome_kind)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["id", "w", "variant", "value", "cens_kind", "outcome_kind"])
            for i, w, v in zip(self.ids, self.w, self.value):
                out.writerow([int(i), repr(float(w)), self.variant, repr(float(v)), self.cens_kind, self.outcome_kind])

    @classmethod
    def from_csv(cls, path) -> "PseudoOutcomes":
        rows = list(csv.DictReader(open(path, newline="")))
        if not rows:
            raise ValueError(f"{path}: no pseudo-outcome rows")
        first = rows[0]
        for line, r in enumerate(rows, start=2):
            if (r["variant"], r["cens_kind"], r["outcome_kind"]) != (first["variant"], first["cens_kind"], first["outcome_kind"]):
                raise ValueError(f"{path}:{line}: mixed provenance in one file")
        return cls(
            np.array([int(r["id"]) for r in rows]),
            np.array([float(r["w"]) for r in rows]),
            np.array([float(r["value"]) for r in rows]),
            first["variant"], first["cens_kind"], first["outcome_kind"],
        )


def _cuts(model: HazardModel, entry):
    """Per-subject times where the hazard may jump: global time knots plus entry + duration knots."""
    cuts = [np.broadcast_to(model.breakpoints(), entry.shape + model.breakpoints().shape)]
    margins = getattr(model, "margins", ())
    if "duration" in margins:
        cuts.append(entry[:, None] + model.knots[margins.index("duration")])
    return np.concatenate(cuts, axis=-1) if cuts else np.empty(entry.shape + (0,))


def path_integral(integrand, lo, hi, cuts, quad_step: float):
    """Composite Simpson of ``integrand(rows, u)`` over [lo_i, hi_i] for every row.

    ``cuts`` (rows x k) splits each interval so the integrand is smooth on
    every piece; each piece uses an even number of panels no wider than
    ``quad_step``. Evaluation nodes at piece ends are nudged inward so
    one-sided limits are used at jumps.
    """
    if quad_step <= 0:
        raise ValueError("quad_step must be positive")
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    out = np.zeros(len(lo))
    rows = np.flatnonzero(hi > lo)
    if rows.size == 0:
        return out
    a, b = lo[rows, None], hi[rows, None]
    inner = np.clip(cuts[rows], a, b) if cuts.shape[-1] else np.empty((len(rows), 0))
    edges = np.sort(np.concatenate([a, inner, b], axis=1), axis=1)
    p_lo, p_hi = edges[:, :-1].ravel(), edges[:, 1:].ravel()
    p_row = np.repeat(rows, edges.shape[1] - 1)
    keep = p_hi > p_lo
    p_lo, p_hi, p_row = p_lo[keep], p_hi[keep], p_row[keep]
    panels = 2 * np.maximum(1, np.ceil((p_hi - p_lo) / (2 * quad_step) - 1e-9).astype(np.int64))
    counts = panels + 1
    ends = np.cumsum(counts)
    start = 0
    while start < len(counts):
        base = ends[start - 1] if start else 0
        stop = int(np.searchsorted(ends, base + _CHUNK_NODES, side="right"))
        stop = max(stop, start + 1)
        seg = np.arange(start, stop)
        c = counts[seg]
        piece = np.repeat(seg, c)
        j = np.arange(int(c.sum())) - np.repeat(np.cumsum(c) - c, c)
        m = panels[piece]
        width = (p_hi[piece] - p_lo[piece]) / m
        u = p_lo[piece] + j * width
        shrink = _EDGE * np.maximum(1.0, np.abs(u))
        u_eval = np.clip(u, p_lo[piece] + shrink, p_hi[piece] - shrink)
        coef = np.where((j == 0) | (j == m), 1.0, np.where(j % 2 == 1, 4.0, 2.0))
        vals = integrand(p_row[piece], u_eval)
        out += np.bincount(p_row[piece], weights=coef * width / 3.0 * vals, minlength=len(out))
        start = stop
    return out


def _unpack(data):
    if isinstance(data, ObservedSubject):
        raise TypeError("wrap single subjects with ObservedCohort.from_subjects")
    return data.t1, data.dest, data.t2, data.w


def ipcw_values(cohort: ObservedCohort, cens: CensoringSurvival) -> np.ndarray:
    """Y 1(C >= eta) / S(eta | X); zero for censored subjects."""
    t1, dest, t2, w = _unpack(cohort)
    y = np.nan_to_num(cohort.outcome(), nan=0.0)
    s_eta = cens.survival(t1, dest, t2, w, cohort.eta)
    return np.where(cohort.censored, 0.0, y / s_eta)


def compensator_values(cohort: ObservedCohort, cens: CensoringSurvival, outcome: ValueTables,
                       quad_step: float = DEFAULT_QUAD_STEP) -> np.ndarray:
    """int_0^{C ^ eta} E2[Y | X^u] gamma(u | X) / S(u | X) du for every subject."""
    t1, dest, t2, w = _unpack(cohort)
    start, end, entry = state_interval(t1, dest, t2, cens.model.state)
    hi = np.minimum(end, cohort.c)
    lo = np.where(hi > start, start, 0.0)
    hi = np.where(hi > start, hi, 0.0)
    ent = np.where(np.isfinite(entry), entry, 0.0)

    def integrand(r, u):
        ev = outcome.expected_outcome(t1[r], dest[r], t2[r], w[r], u)
        return ev * cens.hazard(t1[r], dest[r], t2[r], w[r], u) / cens.survival(t1[r], dest[r], t2[r], w[r], u)

    return path_integral(integrand, lo, hi, _cuts(cens.model, ent), quad_step)


def dr_values(cohort: ObservedCohort, cens: CensoringSurvival, outcome: ValueTables,
              quad_step: float = DEFAULT_QUAD_STEP) -> np.ndarray:
    """Doubly robust pseudo-outcome for every subject of ``cohort``."""
    if quad_step <= 0:
        raise ValueError("quad_step must be positive")
    if abs(outcome.eta - cohort.eta) > 1e-12:
        raise ValueError("outcome tables and cohort use different horizons")
    t1, dest, t2, w = _unpack(cohort)
    value = ipcw_values(cohort, cens)
    cen = np.flatnonzero(cohort.censored)
    if cen.size:
        c = cohort.c[cen]
        jump = outcome.expected_outcome(t1[cen], dest[cen], t2[cen], w[cen], c)
        value[cen] += jump / cens.survival(t1[cen], dest[cen], t2[cen], w[cen], c)
    return value - compensator_values(cohort, cens, outcome, quad_step)


def _kind(obj) -> str:
    if isinstance(obj, CensoringSurvival):
        return obj.model.kind
    return getattr(obj, "label", "") or getattr(obj, "kind", "")


def ipcw_transform(cohort: ObservedCohort, cens: CensoringSurvival) -> PseudoOutcomes:
    return PseudoOutcomes(np.asarray(cohort.ids), cohort.w.copy(), ipcw_values(cohort, cens), "ipcw", _kind(cens))


def dr_batch(cohort: ObservedCohort, cens: CensoringSurvival, outcome: ValueTables,
             quad_step: float = DEFAULT_QUAD_STEP, variant: str = "dr") -> PseudoOutcomes:
    values = dr_values(cohort, cens, outcome, quad_step)
    return PseudoOutcomes(np.asarray(cohort.ids), cohort.w.copy(), values, variant, _kind(cens), _kind(outcome))


def ipcw(subject: ObservedSubject, cens: CensoringSurvival, eta: float, id: int = 0) -> PseudoOutcome:
    """IPCW pseudo-outcome of one subject."""
    cohort = ObservedCohort.from_subjects([subject], eta, ids=[id])
    return ipcw_transform(cohort, cens)[0]


def dr_transform(subject: ObservedSubject, cens: CensoringSurvival, outcome: ValueTables,
                 quad_step: float = DEFAULT_QUAD_STEP, id: int = 0) -> PseudoOutcome:
    """Doubly robust pseudo-outcome of one subject."""
    if quad_step <= 0:
        raise ValueError("quad_step must be positive")
    cohort = ObservedCohort.from_subjects([subject], outcome.eta, ids=[id])
    return dr_batch(cohort, cens, outcome, quad_step)[0]


def causal_values(cohort: ObservedCohort, treatment, arm: int, cens: CensoringSurvival, outcome: ValueTables,
                  propensity, eps_a: float = 0.01, quad_step: float = DEFAULT_QUAD_STEP) -> np.ndarray:
    """Treatment-augmented pseudo-outcome for arm ``arm``.

    ``outcome`` models E2[Y | X^u, A = arm]; ``propensity`` is either an
    array of P3(A = arm | W_i) or a callable of w. Its values are clamped
    to [eps_a, 1 - eps_a] unless they equal 1 exactly, which keeps the
    uncensored-propensity case an exact reduction to the DR transform.
    """
    a = np.asarray(treatment) == arm
    p = np.asarray(propensity(cohort.w) if callable(propensity) else propensity, dtype=float)
    p = np.broadcast_to(p, a.shape)
    p = np.where(p == 1.0, 1.0, np.clip(p, eps_a, 1 - eps_a))
    base = np.zeros(len(cohort))
    if a.any():
        base[a] = dr_values(cohort.take(a), cens, outcome, quad_step)
    m_a = outcome.v1_at(np.zeros(len(cohort)), cohort.w)
    return a / p * base - (a - p) / p * m_a


def causal_transform(cohort: ObservedCohort, treatment, arm: int, cens: CensoringSurvival, outcome: ValueTables,
                     propensity, eps_a: float = 0.01, quad_step: float = DEFAULT_QUAD_STEP) -> PseudoOutcomes:
    values = causal_values(cohort, treatment, arm, cens, outcome, propensity, eps_a, quad_step)
    return PseudoOutcomes(np.asarray(cohort.ids), cohort.w.copy(), values, "causal", _kind(cens), _kind(outcome))


@dataclass(frozen=True)
class BiasDiagnostic:
    w: float
    estimate: float
    se: float
    n_mc: int


def oracle_bias_diagnostic(w: float, cens1: CensoringSurvival, outcome2: ValueTables, truth: ValueTables,
                           config: ScenarioConfig, n_mc: int = 20000, seed: int = 0,
                           quad_step: float = DEFAULT_QUAD_STEP) -> BiasDiagnostic:
    """Monte Carlo value of the product-form conditional bias of Y* at W = w.

    Averages int (E[Y | X^u] - E2[Y | X^u]) (gamma1 - gamma)(u | X)
    P(C >= u | X) / P1(C > u | X) du over full trajectories simulated at
    W = w. The integrand vanishes outside the states where either hazard
    fires.
    """
    full = simulate_cohort(config, n_mc, seed=seed, w=np.full(n_mc, float(w)))
    t1, dest, t2, ww = full.t1, full.dest, full.t2, full.w
    true = CensoringSurvival(OracleHazard(config, "gamma"), epsilon=1e-300)
    states = {true.model.state, cens1.model.state}
    total = np.zeros(n_mc)
    for state in states:
        start, end, entry = state_interval(t1, dest, t2, state)
        hi = np.minimum(end, full.eta)
        ok = hi > start
        lo, hi = np.where(ok, start, 0.0), np.where(ok, hi, 0.0)
        ent = np.where(np.isfinite(entry), entry, 0.0)

        def integrand(r, u):
            a = (t1[r], dest[r], t2[r], ww[r], u)
            gap = truth.expected_outcome(*a) - outcome2.expected_outcome(*a)
            g_hat = np.where(cens1.model.state == state, cens1.hazard(*a), 0.0)
            g = np.where(true.model.state == state, true.hazard(*a), 0.0)
            return gap * (g_hat - g) * true.survival(*a) / cens1.survival(*a)

        cuts = np.concatenate([_cuts(cens1.model, ent), _cuts(true.model, ent)], axis=1)
        total += path_integral(integrand, lo, hi, cuts, quad_step)
    return BiasDiagnostic(float(w), float(total.mean()), float(total.std(ddof=1) / np.sqrt(n_mc)), n_mc)


def write_pseudo_csv(path, outcomes: PseudoOutcomes) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    outcomes.to_csv(path)
