"""Local linear regression written as an explicit linear smoother.

The estimate at w0 is sum_i p_i(w0) y_i where p_i is the first row of the
kernel-weighted least-squares hat matrix. Standard errors use the
heteroskedasticity-robust sandwich sum_i p_i^2 e_i^2 with residuals from
the local line.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

KERNELS = ("epanechnikov", "triangular")
SIDES = ("both", "left", "right")


class SmootherError(ValueError):
    pass


class EmptyWindowError(SmootherError):
    pass


class SingularDesignError(SmootherError):
    pass


def bandwidth_rule(n: int, c: float) -> float:
    """h = c n^(-1/4.5), the undersmoothing rate used for the second stage."""
    if n < 2:
        raise ValueError(f"bandwidth rule needs n >= 2, got {n}")
    if c <= 0:
        raise ValueError(f"bandwidth constant must be positive, got {c}")
    return float(c * n ** (-1.0 / 4.5))


def kernel_weights(u, kernel: str = "epanechnikov") -> np.ndarray:
    u = np.abs(np.asarray(u, dtype=float))
    if kernel == "epanechnikov":
        return np.where(u < 1.0, 0.75 * (1.0 - u * u), 0.0)
    if kernel == "triangular":
        return np.where(u < 1.0, 1.0 - u, 0.0)
    raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")


def _window(w, w0, h, kernel, side):
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    if side not in SIDES:
        raise ValueError(f"unknown side {side!r}; expected one of {SIDES}")
    d = np.asarray(w, dtype=float) - w0
    k = kernel_weights(d / h, kernel)
    if side == "right":
        k = np.where(d >= 0, k, 0.0)
    elif side == "left":
        k = np.where(d < 0, k, 0.0)
    return d, k


def _weights(w, w0, h, kernel, side, fallback):
    d, k = _window(w, w0, h, kernel, side)
    in_win = k > 0
    if not in_win.any():
        raise EmptyWindowError(f"no observations within bandwidth {h:g} of w0={w0:g} ({side})")
    s0 = k.sum()
    s1 = k @ d
    s2 = k @ (d * d)
    det = s0 * s2 - s1 * s1
    if in_win.sum() < 2 or det <= 1e-12 * s0 * s2 or s2 == 0:
        if not fallback:
            raise SingularDesignError(f"local design at w0={w0:g} is singular (slope not identifiable)")
        return k / s0, True
    return k * (s2 - s1 * d) / det, False


def smoother_weights(w, w0: float, h: float, kernel: str = "epanechnikov", side: str = "both",
                     fallback: bool = True) -> np.ndarray:
    """p_i(w0; W^n): weights with sum 1 and sum p_i (w_i - w0) = 0.

    When the slope is not identifiable (one distinct covariate value in the
    window) the local-constant weights are returned instead, or
    SingularDesignError is raised if ``fallback`` is false.
    """
    return _weights(w, w0, h, kernel, side, fallback)[0]


@dataclass(frozen=True)
class SmootherFit:
    w0: float
    estimate: float
    se: float
    h: float
    weights: np.ndarray = field(repr=False)
    sum_abs_weights: float
    local_constant: bool = False

    def ci(self, level: float = 0.95) -> tuple[float, float]:
        z = float(norm.ppf(0.5 + level / 2))
        return self.estimate - z * self.se, self.estimate + z * self.se

    def covers(self, value: float, level: float = 0.95) -> bool:
        lo, hi = self.ci(level)
        return lo <= value <= hi


def local_linear_fit(w, y, w0: float, h: float, kernel: str = "epanechnikov", side: str = "both",
                     fallback: bool = True) -> SmootherFit:
    """Local linear estimate of E[y | w = w0] with a robust standard error."""
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    if w.shape != y.shape:
        raise ValueError("w and y must have the same length")
    p, const = _weights(w, w0, h, kernel, side, fallback)
    est = float(p @ y)
    res = _residuals(w, y, w0, h, kernel, side, const)
    se = float(np.sqrt(np.sum(p * p * res * res)))
    return SmootherFit(float(w0), est, se, float(h), p, float(np.abs(p).sum()), const)


def _residuals(w, y, w0, h, kernel, side, const):
    d, k = _window(w, w0, h, kernel, side)
    m = k > 0
    if const:
        level = (k[m] @ y[m]) / k[m].sum()
        res = np.zeros_like(y)
        res[m] = y[m] - level
        return res
    x = np.column_stack([np.ones(m.sum()), d[m]])
    xtk = x.T * k[m]
    coef = np.linalg.solve(xtk @ x, xtk @ y[m])
    res = np.zeros_like(y)
    res[m] = y[m] - x @ coef
    return res


def fit_curve(w, y, grid, h: float, kernel: str = "epanechnikov") -> list[SmootherFit]:
    return [local_linear_fit(w, y, float(g), h, kernel) for g in np.atleast_1d(grid)]


def write_curve_csv(path, fits, level: float = 0.95) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["w", "estimate", "se", "ci_lo", "ci_hi"])
        for f in fits:
            lo, hi = f.ci(level)
            out.writerow([f.w0, f.estimate, f.se, lo, hi])
