"""Evaluable hazard models.

Every model fires from a single state (``state``) and is evaluated as
``rate(t, w, d)`` where ``d`` is the time since entry into that state.
For state-1 hazards the duration equals the time itself.
"""

from __future__ import annotations

import numpy as np

from ..sim import ScenarioConfig

_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


class HazardModel:
    """Base class; subclasses implement ``rate`` and optionally ``cumulative``."""

    kind = "abstract"
    state = 1

    def rate(self, t, w, d=None):
        raise NotImplementedError

    def breakpoints(self) -> np.ndarray:
        """Times where the hazard may jump (used to split quadrature)."""
        return np.empty(0)

    def cumulative(self, a, b, w, entry=0.0):
        """Integral of the hazard over [a, b] while in ``state`` since ``entry``.

        Generic version: 20-point Gauss-Legendre on pieces between
        breakpoints, exact for the smooth parts of the oracle hazards.
        """
        a, b, w, entry = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a, b, w, entry)))
        b = np.maximum(a, b)
        cuts = self.breakpoints()
        edges = np.concatenate([a[..., None], np.clip(np.broadcast_to(cuts, a.shape + cuts.shape), a[..., None], b[..., None]), b[..., None]], axis=-1)
        edges.sort(axis=-1)
        total = np.zeros(a.shape)
        for k in range(edges.shape[-1] - 1):
            lo, hi = edges[..., k], edges[..., k + 1]
            half = 0.5 * (hi - lo)
            mid = 0.5 * (hi + lo)
            t = mid[..., None] + half[..., None] * _GL_X
            vals = self.rate(t, w[..., None], t - entry[..., None])
            total += half * (vals @ _GL_W)
        return total

    def to_dict(self) -> dict:
        raise NotImplementedError


class OracleHazard(HazardModel):
    """The scenario's true hazard (``which`` in mu12, mu13, mu23, gamma)."""

    kind = "oracle"

    def __init__(self, config: ScenarioConfig, which: str):
        if which not in ("mu12", "mu13", "mu23", "gamma"):
            raise ValueError(f"unknown hazard {which!r}")
        self.config = config
        self.which = which
        self.state = {"mu12": 1, "mu13": 1, "mu23": 2, "gamma": config.gamma.state}[which]

    def rate(self, t, w, d=None):
        t = np.asarray(t, dtype=float)
        w = np.asarray(w, dtype=float)
        if self.which == "mu12":
            p = self.config.mu12
            return p.rate * np.exp(
                p.cos_coef * np.cos(np.pi * w / 2) + p.late_coef * (t > p.late_time) + p.w_coef * w
            )
        if self.which == "mu13":
            p = self.config.mu13
            return p.rate * np.exp(p.sin_coef * np.sin(np.pi * w / 2) + p.t_coef * t)
        if self.which == "mu23":
            p = self.config.mu23
            wb = np.minimum(w, p.w_cap)
            poly = np.polynomial.polynomial.polyval(wb, p.poly)
            dur = np.minimum(np.asarray(d, dtype=float), p.duration_cap)
            return p.rate * np.exp(-p.slope * dur * poly)
        p = self.config.gamma
        band = (p.band_lo <= w) & (w < p.band_hi)
        return np.broadcast_to(p.rate * np.exp(p.band_coef * band), np.broadcast(t, w).shape)

    def breakpoints(self):
        if self.which == "mu12":
            return np.array([self.config.mu12.late_time])
        return np.empty(0)

    def cumulative(self, a, b, w, entry=0.0):
        if self.which == "gamma":
            a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
            return self.rate(a, w) * np.maximum(b - a, 0.0)
        return super().cumulative(a, b, w, entry)

    def to_dict(self):
        return {"kind": self.kind, "which": self.which, "scenario": self.config.to_dict()}


class ParametricHazard(HazardModel):
    """exp(b0 + b1 t + b2 w) while in ``state``."""

    kind = "parametric"

    def __init__(self, beta, state: int = 1, se=None):
        self.beta = np.asarray(beta, dtype=float)
        self.state = state
        self.se = None if se is None else np.asarray(se, dtype=float)

    def rate(self, t, w, d=None):
        b0, b1, b2 = self.beta
        return np.exp(b0 + b1 * np.asarray(t, dtype=float) + b2 * np.asarray(w, dtype=float))

    def cumulative(self, a, b, w, entry=0.0):
        b0, b1, b2 = self.beta
        a = np.asarray(a, dtype=float)
        b = np.maximum(a, np.asarray(b, dtype=float))
        scale = np.exp(b0 + b2 * np.asarray(w, dtype=float))
        if abs(b1) < 1e-12:
            return scale * (b - a)
        # exp(b1 a) * expm1(b1 (b - a)) / b1 avoids cancellation for small b1
        return scale * np.exp(b1 * a) * np.expm1(b1 * (b - a)) / b1

    def to_dict(self):
        out = {"kind": self.kind, "state": self.state, "beta": self.beta.tolist()}
        if self.se is not None:
            out["se"] = self.se.tolist()
        return out


class PiecewiseLassoHazard(HazardModel):
    """Piecewise-constant hazard on a tensor grid of knots (HAL-lite fit).

    ``margins`` names the inputs in order (subset of time, w, duration);
    ``cell_lp`` holds the log-hazard of every grid cell, laid out as an
    array of shape ``[len(knots[m]) + 1 for m in margins]``.
    """

    kind = "piecewise-lasso"

    def __init__(self, margins, knots, features, intercept, coef, state: int = 1, lam: float = 0.0):
        self.margins = tuple(margins)
        self.knots = [np.asarray(k, dtype=float) for k in knots]
        self.features = [tuple(tuple(x) for x in f) for f in features]
        self.intercept = float(intercept)
        self.coef = np.asarray(coef, dtype=float)
        self.state = state
        self.lam = float(lam)
        self.shape = tuple(len(k) + 1 for k in self.knots)
        design = feature_matrix(self.shape, self.features)
        self.cell_lp = (self.intercept + design @ self.coef).reshape(self.shape)

    def cell_index(self, t, w, d):
        vals = {"time": t, "w": w, "duration": d}
        idx = [np.searchsorted(k, np.asarray(vals[m], dtype=float), side="right") for m, k in zip(self.margins, self.knots)]
        return tuple(np.broadcast_arrays(*idx))

    def rate(self, t, w, d=None):
        if d is None:
            d = t
        return np.exp(self.cell_lp[self.cell_index(t, w, d)])

    def breakpoints(self):
        if "time" in self.margins:
            return self.knots[self.margins.index("time")]
        return np.empty(0)

    def cumulative(self, a, b, w, entry=0.0):
        a, b, w, entry = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a, b, w, entry)))
        b = np.maximum(a, b)
        cuts = [self.breakpoints()]
        if "duration" in self.margins:
            cuts.append(entry[..., None] + self.knots[self.margins.index("duration")])
        inner = [np.broadcast_to(c, a.shape + c.shape[-1:]) for c in cuts]
        edges = np.concatenate([a[..., None], *[np.clip(c, a[..., None], b[..., None]) for c in inner], b[..., None]], axis=-1)
        edges.sort(axis=-1)
        lengths = np.diff(edges, axis=-1)
        mids = 0.5 * (edges[..., 1:] + edges[..., :-1])
        vals = self.rate(mids, w[..., None], mids - entry[..., None])
        return np.sum(lengths * vals, axis=-1)

    def to_dict(self):
        return {
            "kind": self.kind,
            "state": self.state,
            "margins": list(self.margins),
            "knots": [k.tolist() for k in self.knots],
            "features": [[list(x) for x in f] for f in self.features],
            "intercept": self.intercept,
            "coef": self.coef.tolist(),
            "lambda": self.lam,
        }


def feature_matrix(shape, features) -> np.ndarray:
    """Binary design over grid cells.

    A feature is a tuple of (margin, knot) pairs and equals 1 on cells whose
    index along each listed margin is above that knot.
    """
    grids = np.indices(shape).reshape(len(shape), -1)
    out = np.ones((grids.shape[1], len(features)))
    for j, feat in enumerate(features):
        for m, k in feat:
            out[:, j] *= grids[m] >= k + 1
    return out


def hazard_from_dict(data: dict) -> HazardModel:
    kind = data["kind"]
    if kind == "oracle":
        return OracleHazard(ScenarioConfig.from_dict(data["scenario"]), data["which"])
    if kind == "parametric":
        return ParametricHazard(data["beta"], data.get("state", 1), data.get("se"))
    if kind == "piecewise-lasso":
        return PiecewiseLassoHazard(
            data["margins"], data["knots"], data["features"], data["intercept"],
            data["coef"], data.get("state", 1), data.get("lambda", 0.0),
        )
    raise ValueError(f"unknown hazard kind {kind!r}")


def oracle_transitions(config: ScenarioConfig):
    return tuple(OracleHazard(config, k) for k in ("mu12", "mu13", "mu23"))


def zero_transitions(config: ScenarioConfig):
    """Transition hazards that never fire; the plug-in outcome model becomes 'accrued time only'."""
    return oracle_transitions(config.without_transitions())
