import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drcut.crossfit import oracle_tables
from drcut.nuisance import CensoringSurvival, OracleHazard, ParametricHazard, fit_censoring
from drcut.pseudo import (
    PseudoOutcome,
    PseudoOutcomes,
    causal_values,
    dr_batch,
    dr_transform,
    dr_values,
    ipcw,
    ipcw_values,
    oracle_bias_diagnostic,
    path_integral,
    write_pseudo_csv,
)
from drcut.sim import ObservedCohort, ObservedSubject, ScenarioConfig, observe_cohort, simulate_cohort
from drcut.truth import marginal_truth

CFG = ScenarioConfig()
ORACLE_CENS = CensoringSurvival(OracleHazard(CFG, "gamma"))
NO_CENS = CensoringSurvival(OracleHazard(CFG.without_censoring(), "gamma"))
WRONG_CENS = CensoringSurvival(ParametricHazard([math.log(0.3), -0.05, 0.05]))


@pytest.fixture(scope="module")
def tables():
    return oracle_tables(CFG)


@pytest.fixture(scope="module")
def cohort():
    return observe_cohort(simulate_cohort(CFG, 400, seed=31))


def test_ipcw_examples():
    censored = ObservedSubject(3.0, ((0.0, 1),), 2.0, True)
    assert ipcw(censored, ORACLE_CENS, 5.0).value == 0.0
    healthy = ObservedSubject(3.0, ((0.0, 1),), 5.0, False)
    assert ipcw(healthy, ORACLE_CENS, 5.0).value == 0.0
    ill = ObservedSubject(3.0, ((0.0, 1), (2.0, 2)), 5.0, False)
    value = ipcw(ill, ORACLE_CENS, 5.0).value
    assert value == pytest.approx(3.0 / math.exp(-0.4), abs=1e-12)
    assert abs(value - 4.4755) < 1e-4


def test_dr_without_censoring_returns_outcome(tables):
    ill = ObservedSubject(0.5, ((0.0, 1), (1.0, 2), (3.25, 3)), 5.0, False)
    assert dr_transform(ill, NO_CENS, tables).value == 2.25
    healthy = ObservedSubject(0.5, ((0.0, 1),), 5.0, False)
    assert dr_transform(healthy, NO_CENS, tables).value == 0.0


def test_dr_censored_healthy_matches_fine_quadrature(tables):
    w, c = 0.5, 2.7
    subject = ObservedSubject(w, ((0.0, 1),), c, True)
    g = 0.2 * math.exp(0.6)
    u = np.linspace(0.0, c, 2701)  # 10x finer than the default step
    f = tables.v1_at(u, np.full_like(u, w)) * g * np.exp(g * u)
    simpson = (u[1] - u[0]) / 3 * (f[0] + f[-1] + 4 * f[1:-1:2].sum() + 2 * f[2:-1:2].sum())
    brute = float(tables.v1_at(c, w)) * math.exp(g * c) - simpson
    assert abs(dr_transform(subject, ORACLE_CENS, tables).value - brute) < 1e-6


def test_quad_step_must_be_positive(tables, cohort):
    with pytest.raises(ValueError):
        dr_values(cohort, ORACLE_CENS, tables, quad_step=0.0)
    with pytest.raises(ValueError):
        dr_transform(cohort.subject(0), ORACLE_CENS, tables, quad_step=-0.1)


def test_quadrature_halving(tables, cohort):
    hal = CensoringSurvival(fit_censoring("hal", observe_cohort(simulate_cohort(CFG, 3000, seed=5)), CFG))
    for cens in (ORACLE_CENS, WRONG_CENS, hal):
        a = dr_values(cohort, cens, tables, quad_step=0.01)
        b = dr_values(cohort, cens, tables, quad_step=0.005)
        assert np.max(np.abs(a - b)) < 1e-5


def test_path_integral_exact_on_polynomials():
    lo = np.array([0.0, 0.3, 1.0])
    hi = np.array([2.0, 0.3, 4.5])
    cuts = np.array([[1.0], [0.5], [2.0]])
    got = path_integral(lambda r, u: u**3 - u, lo, hi, cuts, 0.4)
    ref = (hi**4 - lo**4) / 4 - (hi**2 - lo**2) / 2
    np.testing.assert_allclose(got, ref, rtol=1e-9)  # nodes sit 1e-10 inside each piece


def test_oracle_bin_mean_matches_truth(tables):
    full = simulate_cohort(CFG, 200000, seed=41)
    obs = observe_cohort(full)
    idx = np.flatnonzero(np.abs(obs.w + 1.0) <= 0.1)
    values = dr_values(obs.take(idx), ORACLE_CENS, tables)
    se = values.std(ddof=1) / math.sqrt(len(values))
    target = np.mean(marginal_truth(obs.w[idx], tables))
    assert abs(values.mean() - target) < 3 * se


def test_degenerate_collapse(tables):
    cfg = CFG.without_censoring()
    full = simulate_cohort(cfg, 3000, seed=2)
    obs = observe_cohort(full)
    assert not obs.censored.any()
    assert np.array_equal(dr_values(obs, NO_CENS, tables), full.outcome())
    assert np.array_equal(ipcw_values(obs, NO_CENS), full.outcome())


@given(
    st.floats(0.01, 4.9), st.sampled_from([0, 2, 3]), st.floats(0.01, 4.0), st.floats(-4, 4),
)
@settings(max_examples=60, deadline=None)
def test_uncensored_paths_collapse_without_censoring_model(t1, dest, gap, w):
    jumps = [(0.0, 1)]
    if dest:
        jumps.append((t1, dest))
        if dest == 2 and t1 + gap < 5.0:
            jumps.append((t1 + gap, 3))
    subject = ObservedSubject(w, tuple(jumps), 5.0, False)
    y = 0.0 if dest != 2 else min(t1 + gap, 5.0) - t1
    assert dr_transform(subject, NO_CENS, _TABLES).value == pytest.approx(y, abs=1e-12)


_TABLES = oracle_tables(CFG)


def test_causal_reductions(tables, cohort):
    arm = np.ones(len(cohort), dtype=int)
    np.testing.assert_array_equal(
        causal_values(cohort, arm, 1, ORACLE_CENS, tables, np.ones(len(cohort))),
        dr_values(cohort, ORACLE_CENS, tables),
    )
    other = np.zeros(len(cohort), dtype=int)
    got = causal_values(cohort, other, 1, ORACLE_CENS, tables, 0.3)
    np.testing.assert_allclose(got, marginal_truth(cohort.w, tables), rtol=1e-14)


def test_causal_randomized_arm_mean(tables):
    n = 20000
    full = simulate_cohort(CFG.without_censoring(), n, seed=77)
    obs = observe_cohort(full)
    a = np.random.default_rng(3).integers(0, 2, n)
    psi = causal_values(obs, a, 1, NO_CENS, tables, 0.5)
    y = full.outcome()[a == 1]
    se = math.sqrt(psi.var(ddof=1) / n + y.var(ddof=1) / len(y))
    assert abs(psi.mean() - y.mean()) < 3 * se


def test_bias_diagnostic_vanishes_with_one_oracle(tables):
    zero_outcome = oracle_tables(CFG.without_transitions())
    d = oracle_bias_diagnostic(0.0, ORACLE_CENS, zero_outcome, tables, CFG, n_mc=500)
    assert d.estimate == 0.0 and d.se == 0.0
    d = oracle_bias_diagnostic(0.0, WRONG_CENS, tables, tables, CFG, n_mc=500)
    assert d.estimate == 0.0


def test_bias_diagnostic_nonzero_when_both_wrong(tables):
    zero_outcome = oracle_tables(CFG.without_transitions())
    d = oracle_bias_diagnostic(0.0, WRONG_CENS, zero_outcome, tables, CFG, n_mc=4000)
    assert abs(d.estimate) > 3 * d.se


def test_pseudo_outcome_records(tmp_path, tables, cohort):
    batch = dr_batch(cohort, ORACLE_CENS, tables)
    assert batch.cens_kind == "oracle" and batch.variant == "dr"
    assert isinstance(batch[3], PseudoOutcome) and batch[3].id == cohort.ids[3]
    path = tmp_path / "p.csv"
    write_pseudo_csv(path, batch)
    back = PseudoOutcomes.from_csv(path)
    np.testing.assert_array_equal(back.value, batch.value)
    np.testing.assert_array_equal(back.ids, batch.ids)
    assert (back.variant, back.cens_kind, back.outcome_kind) == (batch.variant, batch.cens_kind, batch.outcome_kind)
    with pytest.raises(ValueError):
        PseudoOutcome(0, 0.0, 1.0, "aipw")
    with pytest.raises(ValueError):
        PseudoOutcome(0, 0.0, float("nan"), "dr")
    text = path.read_text().splitlines()
    text[2] = text[2].replace(",dr,", ",ipcw,")
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(ValueError, match="mixed provenance"):
        PseudoOutcomes.from_csv(path)


def test_single_subject_wrappers_match_batch(tables, cohort):
    batch = dr_values(cohort, WRONG_CENS, tables)
    for i in (0, 5, 17, 123):
        assert dr_transform(cohort.subject(i), WRONG_CENS, tables).value == pytest.approx(batch[i], abs=1e-12)
    one = ObservedCohort.from_subjects([cohort.subject(9)], CFG.eta)
    assert ipcw_values(one, WRONG_CENS)[0] == ipcw_values(cohort, WRONG_CENS)[9]
