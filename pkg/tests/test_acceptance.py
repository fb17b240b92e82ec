"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line.

Runtime on one core is roughly 40 minutes, dominated by the replication
experiments of criteria 5-7.
"""

import math

import numpy as np
import pytest

from drcut.crossfit import oracle_tables
from drcut.experiment import ExperimentConfig, run_experiment
from drcut.nuisance import CensoringSurvival, OracleHazard, fit_parametric_censoring, oracle_transitions
from drcut.pseudo import dr_values, ipcw_values, oracle_bias_diagnostic
from drcut.rdd import fuzzy_rdd, simulate_fuzzy_design
from drcut.sim import ScenarioConfig, observe_cohort, simulate_cohort
from drcut.smooth import kernel_weights, local_linear_fit
from drcut.truth import marginal_truth, solve_value_tables

CFG = ScenarioConfig()
BINS = (-1.0, 0.0, 2.0)
HALF_WIDTH = 0.1
MASTER_SEED = 20240601
# Replications for criterion 7; the HAL outcome model costs about 20 s per
# replication on one core, so the full 200 is out of desk-scale reach.
L2_REPS = 30


def report(capsys, k: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'} | {detail}")


@pytest.fixture(scope="module")
def tables():
    return oracle_tables(CFG)


@pytest.fixture(scope="module")
def big(tables):
    """200000 subjects with the four nuisance pairings evaluated on the bins."""
    full = simulate_cohort(CFG, 200_000, seed=MASTER_SEED + 1)
    obs = observe_cohort(full)
    idx = np.flatnonzero(np.min(np.abs(obs.w[:, None] - np.array(BINS)), axis=1) <= HALF_WIDTH)
    part, y_full = obs.take(idx), full.outcome()[idx]
    oracle_cens = CensoringSurvival(OracleHazard(CFG, "gamma"))
    wrong_cens = CensoringSurvival(fit_parametric_censoring(obs))
    zero = oracle_tables(CFG.without_transitions())
    values = {
        ("oracle", "oracle"): dr_values(part, oracle_cens, tables),
        ("oracle", "zero"): dr_values(part, oracle_cens, zero),
        ("misspec", "oracle"): dr_values(part, wrong_cens, tables),
        ("misspec", "zero"): dr_values(part, wrong_cens, zero),
        "ipcw": ipcw_values(part, oracle_cens),
    }
    return part, y_full, values


def _bin_z(part, values, tables):
    """z-scores of bin means against the bin average of m(W_i)."""
    out = []
    for b in BINS:
        sel = np.abs(part.w - b) <= HALF_WIDTH
        v = values[sel]
        target = np.mean(marginal_truth(part.w[sel], tables))
        out.append((v.mean() - target) / (v.std(ddof=1) / math.sqrt(len(v))))
    return np.array(out)


def test_criterion_1_double_robustness(big, tables, capsys):
    part, _, values = big
    z = {pair: _bin_z(part, values[pair], tables) for pair in
         [("oracle", "oracle"), ("oracle", "zero"), ("misspec", "oracle"), ("misspec", "zero")]}
    ok_pairs = all(np.all(np.abs(z[p]) <= 3) for p in list(z)[:3])
    ok_fail = np.any(np.abs(z[("misspec", "zero")]) > 3)
    detail = "; ".join(f"{a}/{b} z={np.round(v, 2).tolist()}" for (a, b), v in z.items())
    report(capsys, 1, ok_pairs and ok_fail, detail)
    assert ok_pairs and ok_fail


def test_criterion_2_ipcw_unbiased(big, tables, capsys):
    part, _, values = big
    z = _bin_z(part, values["ipcw"], tables)
    ok = bool(np.all(np.abs(z) <= 3))
    report(capsys, 2, ok, f"ipcw oracle z={np.round(z, 2).tolist()}")
    assert ok


def test_criterion_3_variance_inflation(big, capsys):
    part, y, values = big
    ystar = values[("oracle", "oracle")]
    rows, ok = [], True
    for b in BINS:
        sel = np.abs(part.w - b) <= HALF_WIDTH
        d = (ystar[sel] - ystar[sel].mean()) ** 2 - (y[sel] - y[sel].mean()) ** 2
        se = d.std(ddof=1) / math.sqrt(sel.sum())
        v1, v0 = ystar[sel].var(ddof=1), y[sel].var(ddof=1)
        ok &= v1 >= v0 - 2 * se
        rows.append(f"w={b}: var*={v1:.4f} var={v0:.4f} se={se:.4f}")
    report(capsys, 3, ok, "; ".join(rows))
    assert ok


def test_criterion_4_ode_truth(tables, capsys):
    rows, ok = [], True
    ws = (-3.0, -1.0, 0.0, 1.0, 3.0)
    for j, w in enumerate(ws):
        y = simulate_cohort(CFG, 200_000, seed=MASTER_SEED + 10 + j, w=np.full(200_000, w)).outcome()
        z = (y.mean() - float(marginal_truth(w, tables))) / (y.std(ddof=1) / math.sqrt(len(y)))
        ok &= abs(z) <= 3
        rows.append(f"w={w}: z={z:.2f}")
    grid = np.array(ws)
    coarse = marginal_truth(grid, solve_value_tables(oracle_transitions(CFG), CFG.eta, grid))
    fine = marginal_truth(grid, solve_value_tables(oracle_transitions(CFG), CFG.eta, grid, step=0.0025))
    delta = float(np.max(np.abs(coarse - fine)))
    ok &= delta < 1e-6
    report(capsys, 4, ok, "; ".join(rows) + f"; step-halving change {delta:.2e}")
    assert ok


@pytest.fixture(scope="module")
def coverage_run():
    cfg = ExperimentConfig(n=(5000,), reps=200, estimators=("dr-oracle", "dr-hal-zero", "ipcw-misspec"),
                           seed=MASTER_SEED)
    return run_experiment(cfg)


def _coverage_at(res, name, w0, truth):
    est, se = res.at(name, 5000, w0), res.at(name, 5000, w0, "se")
    return float(np.mean(np.abs(est - truth) <= 1.959963984540054 * se)), len(est)


def test_criterion_5_coverage(coverage_run, tables, capsys):
    truth = float(marginal_truth(-1.0, tables))
    c_or, n_or = _coverage_at(coverage_run, "dr-oracle", -1.0, truth)
    c_hal, n_hal = _coverage_at(coverage_run, "dr-hal-zero", -1.0, truth)
    ok = 0.85 <= c_or <= 0.99 and 0.85 <= c_hal <= 0.99 and abs(c_or - c_hal) <= 0.05 and n_or == n_hal == 200
    report(capsys, 5, ok, f"95% coverage oracle={c_or:.3f} hal+zero={c_hal:.3f} over {n_or}/{n_hal} reps")
    assert ok


def test_criterion_6_crossfit_variance(coverage_run, capsys):
    details, ok = [], True
    for name in ("dr-oracle", "dr-hal-zero"):
        sd_cf = coverage_run.at(name, 5000, -1.0).std(ddof=1)
        sd_single = coverage_run.at(name, 5000, -1.0, "single").std(ddof=1)
        ok &= sd_cf < sd_single
        details.append(f"{name}: sd cf={sd_cf:.4f} single={sd_single:.4f}")
    report(capsys, 6, ok, "; ".join(details))
    assert ok


def test_criterion_7_l2_ordering(coverage_run, capsys):
    cfg = ExperimentConfig(n=(5000,), reps=L2_REPS, estimators=("dr-hal",), seed=MASTER_SEED)
    hal = run_experiment(cfg).l2("dr-hal", 5000)
    # identical seeds, so the first L2_REPS replications share cohorts
    oracle = coverage_run.l2("dr-oracle", 5000)[:L2_REPS]
    ipcw = coverage_run.l2("ipcw-misspec", 5000)[:L2_REPS]
    m_o, m_h, m_i = oracle.mean(), hal.mean(), ipcw.mean()
    ok = len(hal) == L2_REPS and abs(m_h - m_o) <= 0.15 * min(m_o, m_h) and max(m_o, m_h) < 0.6 * m_i
    report(capsys, 7, ok, f"mean L2 over {L2_REPS} reps: dr-oracle={m_o:.4f} dr-hal={m_h:.4f} ipcw-misspec={m_i:.4f}")
    assert ok


def test_criterion_8_bias_diagnostic(tables, capsys):
    train = observe_cohort(simulate_cohort(CFG, 20_000, seed=MASTER_SEED + 20))
    cens = CensoringSurvival(fit_parametric_censoring(train))
    zero = oracle_tables(CFG.without_transitions())
    diag = oracle_bias_diagnostic(0.0, cens, zero, tables, CFG, n_mc=20_000, seed=MASTER_SEED + 21)
    n = 200_000
    obs = observe_cohort(simulate_cohort(CFG, n, seed=MASTER_SEED + 22, w=np.zeros(n)))
    y = dr_values(obs, cens, zero)
    bias = y.mean() - float(marginal_truth(0.0, tables))
    se = math.sqrt(diag.se**2 + y.var(ddof=1) / n)
    z = (diag.estimate - bias) / se
    ok = abs(z) <= 3
    report(capsys, 8, ok, f"diagnostic={diag.estimate:.4f} measured={bias:.4f} joint se={se:.4f} z={z:.2f}")
    assert ok


def test_criterion_9_smoother_exactness(capsys):
    rng = np.random.default_rng(MASTER_SEED)
    worst_fit = worst_sum = worst_moment = 0.0
    for _ in range(100):
        n = int(rng.integers(100, 2000))
        w = rng.uniform(-4, 4, n)
        a, b = rng.uniform(-10, 10, 2)
        w0, h = rng.uniform(-3, 3), rng.uniform(0.5, 3.0)
        kernel = str(rng.choice(["epanechnikov", "triangular"]))
        assert np.count_nonzero(kernel_weights((w - w0) / h, kernel)) >= 3
        fit = local_linear_fit(w, a + b * w, w0, h, kernel)
        worst_fit = max(worst_fit, abs(fit.estimate - (a + b * w0)))
        worst_sum = max(worst_sum, abs(fit.weights.sum() - 1))
        worst_moment = max(worst_moment, abs(fit.weights @ (w - w0)))
    ok = worst_fit < 1e-10 and worst_sum <= 1e-12 and worst_moment <= 1e-12
    report(capsys, 9, ok, f"max |fit-line|={worst_fit:.1e} |sum p-1|={worst_sum:.1e} |sum p(w-w0)|={worst_moment:.1e}")
    assert ok


def test_criterion_10_fuzzy_rdd(capsys):
    taus, ses, hits = [], [], 0
    for rep in range(200):
        d = simulate_fuzzy_design(20_000, seed=MASTER_SEED + rep)
        res = fuzzy_rdd(d.y, d.a, d.w0, 0.5, w=d.w)
        lo, hi = res.ci()
        hits += lo <= d.tau <= hi
        taus.append(res.tau_hat)
        ses.append(res.se)
    cover = hits / 200
    ratio = np.mean(ses) / np.std(taus, ddof=1)
    sharp = simulate_fuzzy_design(20_000, seed=MASTER_SEED, sharp=True)
    s = fuzzy_rdd(sharp.y, sharp.a, 0.0, 0.5, w=sharp.w)
    sharp_gap = abs(s.tau_hat - (s.y_plus - s.y_minus))
    ok = cover >= 0.90 and abs(ratio - 1) <= 0.25 and sharp_gap <= 1e-12
    report(capsys, 10, ok, f"coverage={cover:.3f} mean SE/SD={ratio:.3f} sharp gap={sharp_gap:.1e}")
    assert ok
