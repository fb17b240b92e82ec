"""Fuzzy regression discontinuity on (pseudo-)outcomes.

tau = (y+ - y-) / (a+ - a-), each one-sided limit estimated by a local
linear fit evaluated at the threshold. The outcome and treatment fits on
one side share smoother weights, so their joint covariance is
sum_i p_i^2 r_y,i r_a,i; the two sides are independent.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

from .pseudo import PseudoOutcomes
from .smooth import _residuals, _weights

DEFAULT_FLOOR = 0.05
MIN_SIDE_COUNT = 5


class NoDiscontinuityError(ValueError):
    pass


@dataclass(frozen=True)
class RDDResult:
    tau_hat: float
    se: float
    y_plus: float
    y_minus: float
    a_plus: float
    a_minus: float
    se_y_plus: float
    se_y_minus: float
    se_a_plus: float
    se_a_minus: float
    h: float
    w0: float
    n_left: int
    n_right: int

    def ci(self, level: float = 0.95) -> tuple[float, float]:
        z = float(norm.ppf(0.5 + level / 2))
        return self.tau_hat - z * self.se, self.tau_hat + z * self.se

    def to_dict(self) -> dict:
        return asdict(self)


def _side(w, y, a, w0, h, side, kernel):
    """One-sided limits of y and a with their variances and covariance."""
    p, const = _weights(w, w0, h, kernel, side, fallback=False)
    ry = _residuals(w, y, w0, h, kernel, side, const)
    ra = _residuals(w, a, w0, h, kernel, side, const)
    p2 = p * p
    return p @ y, p @ a, p2 @ (ry * ry), p2 @ (ra * ra), p2 @ (ry * ra), int(np.count_nonzero(p))


def _unpack(pseudo_y, pseudo_a):
    if isinstance(pseudo_y, PseudoOutcomes) or isinstance(pseudo_a, PseudoOutcomes):
        if not (isinstance(pseudo_y, PseudoOutcomes) and isinstance(pseudo_a, PseudoOutcomes)):
            raise TypeError("pass both outcome and treatment as PseudoOutcomes")
        if not np.array_equal(pseudo_y.ids, pseudo_a.ids) or not np.array_equal(pseudo_y.w, pseudo_a.w):
            raise ValueError("outcome and treatment pseudo-outcomes must share subject ids and covariates")
        return pseudo_y.w, pseudo_y.value, pseudo_a.value
    return None


def fuzzy_rdd(pseudo_y, pseudo_a, w0: float, h: float, w=None, boundary: str = "right",
              floor: float = DEFAULT_FLOOR, kernel: str = "triangular") -> RDDResult:
    """Ratio estimator of the local treatment effect at the threshold ``w0``.

    ``pseudo_y``/``pseudo_a`` are PseudoOutcomes sharing ids, or plain
    arrays together with ``w``. ``boundary`` names the side whose window
    contains w0 itself ([w0, w0 + h] for "right", [w0 - h, w0] for "left").
    """
    packed = _unpack(pseudo_y, pseudo_a)
    if packed is None:
        if w is None:
            raise ValueError("covariates w are required for array inputs")
        w, y, a = (np.asarray(x, dtype=float) for x in (w, pseudo_y, pseudo_a))
    else:
        w, y, a = packed
    if not (len(w) == len(y) == len(a)):
        raise ValueError("w, y and a must have equal length")
    if boundary not in ("right", "left"):
        raise ValueError("boundary must be 'right' or 'left'")
    # mirror the axis for a left boundary so the closed window is always [w0, w0 + h]
    wv = w if boundary == "right" else 2 * w0 - w
    closed = _side(wv, y, a, w0, h, "right", kernel)
    open_ = _side(wv, y, a, w0, h, "left", kernel)
    plus, minus = (closed, open_) if boundary == "right" else (open_, closed)
    yp, ap, vyp, vap, cp, nr = plus
    ym, am, vym, vam, cm, nl = minus
    if min(nl, nr) < MIN_SIDE_COUNT:
        raise ValueError(f"too few observations in the window: left {nl}, right {nr} (need {MIN_SIDE_COUNT})")
    dy, da = yp - ym, ap - am
    if abs(da) < floor:
        raise NoDiscontinuityError(f"no detectable discontinuity in treatment: |a+ - a-| = {abs(da):.4g} < {floor}")
    tau = dy / da
    var = ((vyp + vym) - 2 * tau * (cp + cm) + tau * tau * (vap + vam)) / (da * da)
    return RDDResult(
        float(tau), float(np.sqrt(max(var, 0.0))), float(yp), float(ym), float(ap), float(am),
        float(np.sqrt(vyp)), float(np.sqrt(vym)), float(np.sqrt(vap)), float(np.sqrt(vam)),
        float(h), float(w0), nl, nr,
    )


@dataclass(frozen=True)
class SensitivityRow:
    h: float
    result: RDDResult | None
    error: str | None = None


def rdd_sensitivity(pseudo_y, pseudo_a, w0: float, hs, **kwargs) -> list[SensitivityRow]:
    """One fuzzy_rdd per bandwidth; failures are recorded, not raised."""
    hs = list(hs)
    if not hs:
        raise ValueError("bandwidth list is empty")
    rows = []
    for h in hs:
        try:
            rows.append(SensitivityRow(float(h), fuzzy_rdd(pseudo_y, pseudo_a, w0, h, **kwargs)))
        except ValueError as exc:
            rows.append(SensitivityRow(float(h), None, f"{type(exc).__name__}: {exc}"))
    return rows


def binned_means(w, values, edges):
    """(bin center, mean, count) for every bin with data."""
    w = np.asarray(w, dtype=float)
    values = np.asarray(values, dtype=float)
    edges = np.asarray(edges, dtype=float)
    idx = np.searchsorted(edges, w, side="right") - 1
    ok = (idx >= 0) & (idx < len(edges) - 1)
    count = np.bincount(idx[ok], minlength=len(edges) - 1)
    total = np.bincount(idx[ok], weights=values[ok], minlength=len(edges) - 1)
    centers = 0.5 * (edges[1:] + edges[:-1])
    has = count > 0
    return centers[has], total[has] / count[has], count[has]


def write_binned_csv(path, w, values, edges) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["bin_center", "mean", "count"])
        for row in zip(*binned_means(w, values, edges)):
            out.writerow([float(row[0]), float(row[1]), int(row[2])])


@dataclass(frozen=True)
class FuzzyDesign:
    w: np.ndarray
    a: np.ndarray
    y: np.ndarray
    tau: float
    w0: float


def simulate_fuzzy_design(n: int, seed: int, tau: float = 0.5, jump: float = 0.4, w0: float = 0.0,
                          sharp: bool = False) -> FuzzyDesign:
    """Synthetic threshold design with a constant treatment effect ``tau``.

    W ~ U(w0 - 1, w0 + 1); P(A = 1 | W) = 0.3 + 0.1 (W - w0) + jump 1(W >= w0);
    Y = 1 + 0.5 (W - w0) + tau A + N(0, 1). With ``sharp`` A = 1(W >= w0).
    """
    rng = np.random.default_rng(seed)
    w = rng.uniform(w0 - 1.0, w0 + 1.0, n)
    above = w >= w0
    if sharp:
        a = above.astype(float)
    else:
        prob = 0.3 + 0.1 * (w - w0) + jump * above
        a = (rng.uniform(size=n) < prob).astype(float)
    y = 1.0 + 0.5 * (w - w0) + tau * a + rng.standard_normal(n)
    return FuzzyDesign(w, a, y, tau, w0)
