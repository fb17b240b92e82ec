"""HAL-lite: L1-penalized piecewise-exponential hazard on zero-order indicator splines.

The basis consists of indicators 1{x >= knot} per margin and their products
across margins (up to ``max_order``). Because every basis function is
constant on the cells of the knot grid, the Poisson working likelihood only
depends on per-cell event counts and exact per-cell exposure, so the data
are aggregated to cells before fitting. Each coordinate update is an exact
one-dimensional minimization, which makes the objective nonincreasing.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numba
import numpy as np

from .exposure import Exposure
from .hazards import PiecewiseLassoHazard, feature_matrix


@dataclass(frozen=True)
class BasisConfig:
    margins: tuple[str, ...] = ("time", "w")
    n_knots: int | tuple[int, ...] = 8
    max_order: int = 2
    n_lambda: int = 20
    lambda_ratio: float = 1e-3
    n_folds: int = 5
    tol: float = 1e-7
    max_sweeps: int = 20000
    patience: int = 3
    rule: str = "min"
    relax: bool = False
    seed: int = 0


_RELAX_LAM = 1e-9

# additive in (time, w) with a fine w grid: resolves sharp covariate steps without interaction noise
CENSORING_BASIS = BasisConfig(max_order=1, n_knots=(8, 64))
TRANSITION_BASIS = {
    "mu12": BasisConfig(),
    "mu13": BasisConfig(),
    "mu23": BasisConfig(margins=("time", "w", "duration"), max_order=3),
}


def _quantile_knots(values, n_knots):
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if n_knots == 0 or values.size == 0:
        return np.empty(0)
    probs = np.arange(1, n_knots + 1) / (n_knots + 1)
    knots = np.unique(np.quantile(values, probs))
    return knots[knots > values.min()]


def choose_knots(exp: Exposure, cfg: BasisConfig):
    ev = exp.event
    counts = cfg.n_knots if isinstance(cfg.n_knots, tuple) else (cfg.n_knots,) * len(cfg.margins)
    knots = []
    for m, n_knots in zip(cfg.margins, counts):
        if m == "time":
            src = exp.stop[ev] if ev.any() else exp.stop
        elif m == "w":
            src = exp.w
        elif m == "duration":
            src = (exp.stop - exp.entry)[ev] if ev.any() else exp.stop - exp.entry
        else:
            raise ValueError(f"unknown margin {m!r}")
        knots.append(_quantile_knots(src, n_knots))
    return knots


def make_features(knots, max_order: int):
    """All products of single-margin indicators over margin subsets of size <= max_order."""
    feats = []
    n = len(knots)
    for order in range(1, min(max_order, n) + 1):
        for subset in itertools.combinations(range(n), order):
            for combo in itertools.product(*(range(len(knots[m])) for m in subset)):
                feats.append(tuple(zip(subset, combo)))
    return feats


def aggregate(exp: Exposure, margins, knots, groups=None, n_groups: int = 1):
    """Exact exposure and event counts per grid cell (and per group, e.g. CV fold).

    Returns arrays of shape (n_groups, n_cells).
    """
    shape = tuple(len(k) + 1 for k in knots)
    n_cells = int(np.prod(shape))
    if groups is None:
        groups = np.zeros(len(exp), dtype=int)
    cuts = []
    if "time" in margins:
        cuts.append(np.broadcast_to(knots[margins.index("time")], (len(exp), len(knots[margins.index("time")]))))
    if "duration" in margins:
        kd = knots[margins.index("duration")]
        cuts.append(exp.entry[:, None] + kd[None, :])
    a, b = exp.start[:, None], exp.stop[:, None]
    edges = np.concatenate([a, *[np.clip(c, a, b) for c in cuts], b], axis=1)
    edges.sort(axis=1)
    length = np.diff(edges, axis=1)
    mid = 0.5 * (edges[:, 1:] + edges[:, :-1])

    def cells(t, rows=slice(None)):
        vals = {
            "time": t,
            "w": np.broadcast_to(exp.w[rows][:, None], t.shape),
            "duration": t - exp.entry[rows][:, None],
        }
        idx = [np.searchsorted(k, vals[m], side="right") for m, k in zip(margins, knots)]
        return np.ravel_multi_index(idx, shape)

    flat = cells(mid) + groups[:, None] * n_cells
    expo = np.bincount(flat.ravel(), weights=length.ravel(), minlength=n_groups * n_cells)
    ev = exp.event
    ev_cells = cells(exp.stop[ev][:, None], ev)[:, 0] + groups[ev] * n_cells
    events = np.bincount(ev_cells, minlength=n_groups * n_cells).astype(float)
    return expo.reshape(n_groups, n_cells), events.reshape(n_groups, n_cells)


@numba.njit(cache=True)
def _objective(E, D, eta, beta, lam):
    s = 0.0
    for c in range(E.shape[0]):
        if E[c] > 0:
            s += E[c] * math.exp(eta[c])
        s -= D[c] * eta[c]
    return s + lam * np.sum(np.abs(beta))


@numba.njit(cache=True)
def _coordinate_descent(indptr, indices, E, D, beta0, beta, lam, tol, max_sweeps, record):
    """Exact coordinate minimization of sum(E exp(eta) - D eta) + lam |beta|_1.

    Features are binary; ``indices[indptr[j]:indptr[j+1]]`` lists the cells
    where feature j equals 1. Returns (beta0, beta, sweeps, objective trace).
    """
    n_cells = E.shape[0]
    p = beta.shape[0]
    eta = np.full(n_cells, beta0)
    for j in range(p):
        if beta[j] != 0.0:
            for k in range(indptr[j], indptr[j + 1]):
                eta[indices[k]] += beta[j]
    mu = np.empty(n_cells)
    for c in range(n_cells):
        mu[c] = E[c] * math.exp(eta[c]) if E[c] > 0 else 0.0
    B = np.zeros(p)
    for j in range(p):
        for k in range(indptr[j], indptr[j + 1]):
            B[j] += D[indices[k]]
    d_total = D.sum()
    trace = np.empty(max_sweeps + 1 if record else 1)
    if record:
        trace[0] = _objective(E, D, eta, beta, lam)
    active = np.ones(p, dtype=np.bool_)
    full = True
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        max_delta = 0.0
        # intercept
        s = mu.sum()
        delta = math.log(d_total / s)
        if delta != 0.0:
            beta0 += delta
            f = math.exp(delta)
            for c in range(n_cells):
                eta[c] += delta
                mu[c] *= f
            max_delta = max(max_delta, abs(delta))
        for j in range(p):
            if not full and not active[j]:
                continue
            A = 0.0
            for k in range(indptr[j], indptr[j + 1]):
                A += mu[indices[k]]
            old = beta[j]
            a = A * math.exp(-old)
            if a <= 0.0:
                new = 0.0
            elif B[j] - lam > a:
                new = math.log((B[j] - lam) / a)
            elif B[j] + lam < a:
                new = math.log((B[j] + lam) / a)
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                beta[j] = new
                for k in range(indptr[j], indptr[j + 1]):
                    c = indices[k]
                    eta[c] += delta
                    mu[c] = E[c] * math.exp(eta[c]) if E[c] > 0 else 0.0
                max_delta = max(max_delta, abs(delta))
        if record:
            trace[sweeps] = _objective(E, D, eta, beta, lam)
        if max_delta < tol:
            if full:
                break
            full = True
        else:
            if full:
                for j in range(p):
                    active[j] = beta[j] != 0.0
            full = False
    return beta0, beta, sweeps, trace[: sweeps + 1] if record else trace


def _csc(design):
    cols = [np.flatnonzero(design[:, j]) for j in range(design.shape[1])]
    indptr = np.zeros(len(cols) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(c) for c in cols])
    indices = np.concatenate(cols).astype(np.int64) if cols else np.empty(0, dtype=np.int64)
    return indptr, indices


def _heldout_loss(E, D, eta):
    pos = E > 0
    return float(np.sum(E[pos] * np.exp(eta[pos])) - np.sum(D * eta))


@dataclass
class PenalizedFit:
    intercept: float
    coef: np.ndarray
    lam: float
    sweeps: int
    trace: np.ndarray


def fit_penalized(design, E, D, lam, beta0=None, beta=None, tol=1e-7, max_sweeps=20000, record=False):
    """Fit at one penalty level on aggregated cells; lam is on the summed loss scale."""
    E = np.asarray(E, dtype=float)
    D = np.asarray(D, dtype=float)
    if E.sum() <= 0:
        raise ValueError("all-zero exposure")
    if D.sum() <= 0:
        raise ValueError("no events in the fitting data")
    indptr, indices = _csc(design)
    p = design.shape[1]
    if beta0 is None:
        beta0 = math.log(D.sum() / E.sum())
    beta = np.zeros(p) if beta is None else np.array(beta, dtype=float)
    b0, b, sweeps, trace = _coordinate_descent(
        indptr, indices, E, D, float(beta0), beta, float(lam), tol, max_sweeps, record
    )
    return PenalizedFit(b0, b, lam, sweeps, trace)


def lambda_max(design, E, D) -> float:
    """Smallest penalty (summed scale) at which all coefficients are zero."""
    rate = D.sum() / E.sum()
    grad = design.T @ (D - E * rate)
    return float(np.max(np.abs(grad))) if grad.size else 0.0


def fit_piecewise_lasso_hazard(
    exp: Exposure, cfg: BasisConfig = CENSORING_BASIS, state: int = 1, lambdas=None
) -> PiecewiseLassoHazard:
    """Penalized piecewise-exponential hazard with V-fold cross-validated penalty.

    Penalties are expressed per subject (the summed loss is divided by the
    number of at-risk rows), so one value means the same for full data and
    CV training folds. ``lambdas`` overrides the automatic path.
    """
    if not cfg.margins:
        raise ValueError("empty basis: no margins configured")
    if len(exp) == 0 or exp.total_time <= 0:
        raise ValueError("all-zero exposure")
    if exp.n_events == 0:
        raise ValueError("no events: hazard not estimable")
    knots = choose_knots(exp, cfg)
    features = make_features(knots, cfg.max_order)
    shape = tuple(len(k) + 1 for k in knots)
    design = feature_matrix(shape, features)
    n = len(exp)
    rng = np.random.default_rng(cfg.seed)
    folds = rng.permutation(np.arange(n) % cfg.n_folds) if cfg.n_folds > 1 else np.zeros(n, dtype=int)
    E_f, D_f = aggregate(exp, cfg.margins, knots, folds, max(cfg.n_folds, 1))
    E, D = E_f.sum(axis=0), D_f.sum(axis=0)

    if design.shape[1] == 0:
        return PiecewiseLassoHazard(cfg.margins, knots, features, math.log(D.sum() / E.sum()), [], state, 0.0)

    if lambdas is None:
        top = lambda_max(design, E, D) / n
        lambdas = top * np.geomspace(1.0, cfg.lambda_ratio, cfg.n_lambda)
    lambdas = np.sort(np.atleast_1d(np.asarray(lambdas, dtype=float)))[::-1]

    if len(lambdas) == 1 or cfg.n_folds < 2:
        best = lambdas[-1] if len(lambdas) == 1 else lambdas[0]
    else:
        # Folds advance along the path in lockstep; stop once the pooled
        # held-out loss has not improved for `patience` consecutive penalties.
        loss = np.full(len(lambdas), np.inf)
        fold_loss = np.zeros((len(lambdas), cfg.n_folds))
        warm = [(None, None)] * cfg.n_folds
        n_tr = [int(np.sum(folds != k)) for k in range(cfg.n_folds)]
        since_best = 0
        for i, lam in enumerate(lambdas):
            for k in range(cfg.n_folds):
                fit = fit_penalized(design, E - E_f[k], D - D_f[k], lam * n_tr[k], *warm[k], cfg.tol, cfg.max_sweeps)
                warm[k] = (fit.intercept, fit.coef)
                fold_loss[i, k] = _heldout_loss(E_f[k], D_f[k], fit.intercept + design @ fit.coef)
            loss[i] = fold_loss[i].sum()
            since_best = 0 if loss[i] <= loss[: i + 1].min() else since_best + 1
            if since_best >= cfg.patience:
                break
        i_min = int(np.argmin(loss))
        if cfg.rule == "1se":
            se = math.sqrt(cfg.n_folds) * float(np.std(fold_loss[i_min], ddof=1))
            i_min = int(np.flatnonzero(loss <= loss[i_min] + se)[0])
        elif cfg.rule != "min":
            raise ValueError(f"unknown selection rule {cfg.rule!r}")
        best = lambdas[i_min]

    b0, b = None, None
    for lam in lambdas[lambdas >= best]:
        fit = fit_penalized(design, E, D, lam * n, b0, b, cfg.tol, cfg.max_sweeps)
        b0, b = fit.intercept, fit.coef
    if cfg.relax:
        # unpenalized refit on the selected features removes the shrinkage bias
        active = np.flatnonzero(b != 0)
        if active.size:
            refit = fit_penalized(design[:, active], E, D, _RELAX_LAM * n, b0, b[active], cfg.tol, cfg.max_sweeps)
            b0, b = refit.intercept, np.zeros_like(b)
            b[active] = refit.coef
        else:
            b0 = math.log(D.sum() / E.sum())
    return PiecewiseLassoHazard(cfg.margins, knots, features, b0, b, state, best)
