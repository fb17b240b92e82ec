"""Backward value equations for the expected remaining illness time.

V2(t, s, w) is the expected time still to be spent ill on (t, eta) for a
subject ill since s; V1(t, w) the same quantity for a healthy subject.
They solve

    dV2/dt = -1 + mu23(t, s, w) V2,                      V2(eta) = 0
    dV1/dt = (mu12 + mu13)(t, w) V1 - mu12(t, w) V2(t, t, w),   V1(eta) = 0

and are integrated backward with classical RK4. V2 is solved on a coarse
grid of entry times s; V2(t, t, w), which drives V1, is interpolated from
the diagonal of that table with a cubic spline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .nuisance.exposure import state_at
from .nuisance.hazards import HazardModel

DEFAULT_STEP = 0.005
DEFAULT_S_STEP = 0.05
_NUDGE = 1e-9


class HazardEvaluationError(FloatingPointError):
    pass


def _checked(values, name, t, s, w):
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.argwhere(bad)[0]
        tt = np.broadcast_to(t, values.shape)[tuple(idx)]
        ss = np.broadcast_to(s, values.shape)[tuple(idx)] if s is not None else float("nan")
        ww = np.broadcast_to(w, values.shape)[tuple(idx)]
        raise HazardEvaluationError(f"non-finite {name} at (t={tt:.6g}, s={ss:.6g}, w={ww:.6g})")
    return values


@dataclass(frozen=True)
class ValueTables:
    """Gridded V1(t, w), V2(t, s, w) and the entry diagonal V2(t, t, w).

    ``v2[k, j, :]`` is V2(grid_t[k], grid_s[j], .) and is NaN for
    grid_t[k] < grid_s[j].
    """

    grid_t: np.ndarray
    grid_s: np.ndarray
    grid_w: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    diag: np.ndarray
    eta: float
    label: str = ""

    @property
    def step(self) -> float:
        return float(self.grid_t[1] - self.grid_t[0])

    def _t_index(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.eta + 1e-12):
            raise ValueError(f"time outside table range [0, {self.eta}]")
        x = np.clip(t, 0.0, self.eta) / self.step
        k = np.minimum(np.floor(x).astype(int), len(self.grid_t) - 2)
        return k, x - k

    def _w_weights(self, w):
        w = np.asarray(w, dtype=float)
        g = self.grid_w
        if len(g) == 1:
            if np.any(np.abs(w - g[0]) > 1e-9):
                raise ValueError(f"tables were built for w={g[0]} only")
            return np.zeros(w.shape, dtype=int), np.zeros(w.shape, dtype=int), np.zeros(w.shape)
        if np.any(w < g[0] - 1e-9) or np.any(w > g[-1] + 1e-9):
            raise ValueError(f"w outside table range [{g[0]}, {g[-1]}]")
        j = np.clip(np.searchsorted(g, w, side="right") - 1, 0, len(g) - 2)
        frac = np.clip((w - g[j]) / (g[j + 1] - g[j]), 0.0, 1.0)
        return j, j + 1, frac

    def _lookup(self, table, t, w):
        """Bilinear interpolation of a (t, w) table."""
        t, w = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(w, dtype=float))
        k, ft = self._t_index(t)
        j0, j1, fw = self._w_weights(w)
        lo = table[k, j0] * (1 - fw) + table[k, j1] * fw
        hi = table[k + 1, j0] * (1 - fw) + table[k + 1, j1] * fw
        return lo * (1 - ft) + hi * ft

    def v1_at(self, t, w):
        return self._lookup(self.v1, t, w)

    def diag_at(self, t, w):
        return self._lookup(self.diag, t, w)

    def v2_at(self, t, s, w):
        """V2(t, s, w) for s <= t, bilinear in (t, s) and linear in w."""
        t, s, w = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (t, s, w)))
        if np.any(s > t + 1e-12):
            raise ValueError("entry time s must not exceed t")
        ds = float(self.grid_s[1] - self.grid_s[0]) if len(self.grid_s) > 1 else self.eta
        j = np.clip(np.floor(s / ds + 1e-12).astype(int), 0, len(self.grid_s) - 1)
        s_lo = self.grid_s[j]
        left = self._column(j, t, w)
        j_hi = np.minimum(j + 1, len(self.grid_s) - 1)
        s_hi = self.grid_s[j_hi]
        has_right = (t >= s_hi) & (j_hi > j)
        right = np.where(has_right, self._column(np.where(has_right, j_hi, j), t, w), self.diag_at(t, w))
        s_right = np.where(has_right, s_hi, t)
        span = s_right - s_lo
        frac = np.where(span > 0, (s - s_lo) / np.where(span > 0, span, 1.0), 0.0)
        return left * (1 - frac) + right * frac

    def _column(self, j, t, w):
        k, ft = self._t_index(t)
        j0, j1, fw = self._w_weights(w)
        k1 = np.minimum(k + 1, len(self.grid_t) - 1)
        col = self.v2
        lo = col[k, j, j0] * (1 - fw) + col[k, j, j1] * fw
        hi = col[k1, j, j0] * (1 - fw) + col[k1, j, j1] * fw
        # the node just below the entry time is undefined; use the exact node
        lo = np.where(np.isnan(lo), hi, lo)
        return lo * (1 - ft) + hi * ft

    def expected_outcome(self, t1, dest, t2, w, u):
        """E[Y | X^u] for paths given as (t1, dest, t2) arrays."""
        t1, dest, t2, w, u = np.broadcast_arrays(*(np.asarray(x) for x in (t1, dest, t2, w, u)))
        u = u.astype(float)
        state = state_at(t1, dest, t2, u)
        ill = dest == 2
        accrued = np.where(ill & (u > t1), np.minimum(u, t2) - np.where(ill, t1, 0.0), 0.0)
        out = accrued.astype(float)
        s1 = state == 1
        if s1.any():
            out[s1] += self.v1_at(u[s1], w[s1])
        s2 = state == 2
        if s2.any():
            out[s2] += self.v2_at(u[s2], t1[s2].astype(float), w[s2])
        return out

    def to_npz(self, path) -> None:
        np.savez_compressed(
            path, grid_t=self.grid_t, grid_s=self.grid_s, grid_w=self.grid_w,
            v1=self.v1, v2=self.v2, diag=self.diag, eta=self.eta, label=self.label,
        )

    @classmethod
    def from_npz(cls, path) -> "ValueTables":
        with np.load(path) as z:
            return cls(
                z["grid_t"], z["grid_s"], z["grid_w"], z["v1"], z["v2"], z["diag"],
                float(z["eta"]), str(z["label"]),
            )

    def long_rows(self):
        """(t, s, w, value) rows; s is NaN for V1 rows."""
        rows = []
        for k, t in enumerate(self.grid_t):
            for i, w in enumerate(self.grid_w):
                rows.append(("v1", t, np.nan, w, self.v1[k, i]))
                for j, s in enumerate(self.grid_s):
                    if s <= t:
                        rows.append(("v2", t, s, w, self.v2[k, j, i]))
        return rows


def solve_value_tables(
    hazards: tuple[HazardModel, HazardModel, HazardModel],
    eta: float,
    grid_w,
    step: float = DEFAULT_STEP,
    s_step: float = DEFAULT_S_STEP,
    label: str = "",
) -> ValueTables:
    """Solve both value equations by backward RK4 for every w in ``grid_w``."""
    mu12, mu13, mu23 = hazards
    if step <= 0 or s_step <= 0:
        raise ValueError("step sizes must be positive")
    n = int(round(eta / step))
    if abs(n * step - eta) > 1e-9 * eta:
        raise ValueError(f"step {step} does not divide eta={eta}")
    ratio = int(round(s_step / step))
    if ratio < 1 or abs(ratio * step - s_step) > 1e-9:
        raise ValueError("s_step must be a multiple of step")
    w = np.atleast_1d(np.asarray(grid_w, dtype=float))
    if np.any(np.diff(w) <= 0):
        raise ValueError("grid_w must be strictly increasing")
    h = eta / n
    t = np.linspace(0.0, eta, n + 1)
    s_idx = np.arange(0, n + 1, ratio)
    s = t[s_idx]
    m = len(s)
    nw = len(w)
    wb = w[None, :]
    tiny = _NUDGE * h

    def f23(tt, ss, v):
        rate = _checked(mu23.rate(tt, wb, tt - ss[:, None]), "mu23", tt, ss[:, None], wb)
        return -1.0 + rate * v

    v2 = np.full((n + 1, m, nw), np.nan)
    v2[n] = 0.0
    for k in range(n, 0, -1):
        act = s_idx <= k - 1
        ss = s[act]
        v = v2[k, act]
        hi, lo, mid = t[k] - tiny, t[k - 1] + tiny, t[k] - 0.5 * h
        k1 = f23(hi, ss, v)
        k2 = f23(mid, ss, v - 0.5 * h * k1)
        k3 = f23(mid, ss, v - 0.5 * h * k2)
        k4 = f23(lo, ss, v - h * k3)
        v2[k - 1, act] = v - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    nodes = v2[s_idx, np.arange(m)]  # V2(s_j, s_j, w)
    if m >= 4:
        spline = CubicSpline(s, nodes, axis=0)
        diag_fn = spline
    else:
        diag_fn = lambda x: np.stack([np.interp(x, s, nodes[:, i]) for i in range(nw)], axis=-1)  # noqa: E731
    diag = diag_fn(t)
    diag[-1] = 0.0  # terminal condition, exact rather than interpolated
    diag_mid = diag_fn(t[1:] - 0.5 * h)

    def f1(tt, v, d):
        a = _checked(mu12.rate(tt, wb[0], tt), "mu12", tt, None, wb[0])
        b = _checked(mu13.rate(tt, wb[0], tt), "mu13", tt, None, wb[0])
        return (a + b) * v - a * d

    v1 = np.zeros((n + 1, nw))
    for k in range(n, 0, -1):
        v = v1[k]
        hi, lo, mid = t[k] - tiny, t[k - 1] + tiny, t[k] - 0.5 * h
        dm = diag_mid[k - 1]
        k1 = f1(hi, v, diag[k])
        k2 = f1(mid, v - 0.5 * h * k1, dm)
        k3 = f1(mid, v - 0.5 * h * k2, dm)
        k4 = f1(lo, v - h * k3, diag[k - 1])
        v1[k - 1] = v - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return ValueTables(t, s, w, v1, v2, diag, float(eta), label)


def conditional_expectation(subject, u: float, tables: ValueTables) -> float:
    """E[Y | X^u]: illness time accrued on [0, u] plus the value of the state at u."""
    if u > tables.eta + 1e-12 or u < 0:
        raise ValueError(f"u={u} outside table range [0, {tables.eta}]")
    t1, dest, t2 = np.inf, 0, np.inf
    for time, state in subject.jumps[1:]:
        if state == 3 and dest == 2:
            t2 = time
        else:
            t1, dest = time, state
    return float(tables.expected_outcome(t1, dest, t2, subject.w, u))


def marginal_truth(w, tables: ValueTables):
    """m(w) = E[Y | W = w] = V1(0, w)."""
    out = tables.v1_at(np.zeros(np.shape(w)), w)
    return float(out) if np.ndim(out) == 0 else out
