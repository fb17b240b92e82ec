"""Maximum likelihood for the log-linear censoring hazard exp(b0 + b1 t + b2 w)."""

from __future__ import annotations

import numpy as np

from .exposure import Exposure, censoring_exposure
from .hazards import ParametricHazard

_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


class ConvergenceError(RuntimeError):
    pass


def loglik(beta, exp: Exposure):
    """Log-likelihood, score and Hessian of the piecewise-exponential model."""
    beta = np.asarray(beta, dtype=float)
    half = 0.5 * (exp.stop - exp.start)
    t = 0.5 * (exp.stop + exp.start)[:, None] + half[:, None] * _GL_X
    lam = np.exp(beta[0] + beta[1] * t + beta[2] * exp.w[:, None])
    wq = half[:, None] * _GL_W * lam
    x = np.stack([np.ones_like(t), t, np.broadcast_to(exp.w[:, None], t.shape)])
    ev = exp.event
    t_ev = exp.stop[ev]
    x_ev = np.stack([np.ones_like(t_ev), t_ev, exp.w[ev]])
    value = float(np.sum(x_ev.T @ beta) - wq.sum())
    score = x_ev.sum(axis=1) - np.einsum("knq,nq->k", x, wq)
    hess = -np.einsum("knq,lnq,nq->kl", x, x, wq)
    return value, score, hess


def fit_parametric_censoring(data, state: int = 1, tol: float = 1e-8, max_iter: int = 100) -> ParametricHazard:
    """Newton-Raphson MLE of exp(b0 + b1 t + b2 w) on the censoring at-risk time.

    ``data`` is an ObservedCohort or a prepared Exposure. Raises ValueError
    without censoring events and ConvergenceError if the score norm is not
    below ``tol`` after ``max_iter`` iterations.
    """
    exp = data if isinstance(data, Exposure) else censoring_exposure(data, state)
    d = exp.n_events
    if d == 0:
        raise ValueError("no censoring events: MLE undefined")
    beta = np.array([np.log(d / exp.total_time), 0.0, 0.0])
    value, score, hess = loglik(beta, exp)
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(score))
        if gnorm < tol:
            break
        step = np.linalg.solve(hess, -score)
        t = 1.0
        while True:
            cand = beta + t * step
            cval, cscore, chess = loglik(cand, exp)
            if cval >= value - 1e-12 * abs(value) or t < 1e-10:
                break
            t *= 0.5
        beta, value, score, hess = cand, cval, cscore, chess
    else:
        gnorm = float(np.linalg.norm(score))
        if gnorm >= tol:
            raise ConvergenceError(f"Newton did not converge in {max_iter} iterations (|score| = {gnorm:.3g})")
    se = np.sqrt(np.diag(np.linalg.inv(-hess)))
    return ParametricHazard(beta, state=state, se=se)
