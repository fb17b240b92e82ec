import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drcut.nuisance import oracle_transitions, plug_in_outcome_model, zero_transitions
from drcut.nuisance.hazards import OracleHazard
from drcut.sim import FullTrajectory, ObservedSubject, ScenarioConfig, simulate_cohort, simulate_from_state
from drcut.truth import HazardEvaluationError, ValueTables, conditional_expectation, marginal_truth, solve_value_tables

CFG = ScenarioConfig()
W = np.array([-3.0, -1.0, 0.0, 1.0, 3.0])


@pytest.fixture(scope="module")
def tables():
    return solve_value_tables(oracle_transitions(CFG), CFG.eta, np.linspace(-4, 4, 81))


def test_terminal_conditions_and_bounds(tables):
    assert np.all(tables.v1[-1] == 0)
    assert np.all(tables.diag[-1] == 0)
    last = tables.v2[-1]
    assert np.all(last[np.isfinite(last)] == 0)
    room = (tables.eta - tables.grid_t)[:, None]
    assert np.all(tables.v1 >= 0) and np.all(tables.v1 <= room + 1e-12)
    v2 = tables.v2
    ok = np.isfinite(v2)
    assert np.all(v2[ok] >= 0)
    assert np.all((v2 <= room[:, :, None] + 1e-12)[ok])


def test_no_death_from_illness_gives_remaining_time():
    cfg = replace(CFG, mu23=replace(CFG.mu23, rate=0.0))
    tab = solve_value_tables(oracle_transitions(cfg), cfg.eta, W)
    t = tab.grid_t[:, None, None]
    ok = np.isfinite(tab.v2)
    assert np.max(np.abs((tab.v2 - (cfg.eta - t))[ok])) < 1e-12
    assert tab.v2_at(2.0, 1.3, 0.5) == pytest.approx(3.0, abs=1e-12)


def test_no_exit_from_health_gives_zero():
    tab = solve_value_tables(zero_transitions(CFG), CFG.eta, W)
    assert np.all(tab.v1 == 0)
    assert np.all(marginal_truth(W, tab) == 0)


def test_plug_in_with_oracle_hazards_equals_truth():
    a = solve_value_tables(oracle_transitions(CFG), CFG.eta, W)
    b = plug_in_outcome_model(oracle_transitions(CFG), CFG.eta, W)
    assert np.array_equal(a.v1, b.v1)
    assert np.array_equal(a.v2, b.v2, equal_nan=True)


def test_plug_in_zero_hazards_is_accrued_time():
    tab = plug_in_outcome_model(zero_transitions(CFG), CFG.eta, W)
    ill = ObservedSubject(0.0, ((0.0, 1), (1.0, 2)), 2.5, True)
    healthy = ObservedSubject(0.0, ((0.0, 1),), 2.5, True)
    # zero hazards still leave an ill subject ill until eta
    assert conditional_expectation(ill, 2.5, tab) == pytest.approx(1.5 + 2.5, abs=1e-12)
    assert conditional_expectation(healthy, 2.5, tab) == 0.0


def test_rk4_step_halving():
    a = marginal_truth(W, solve_value_tables(oracle_transitions(CFG), CFG.eta, W, step=0.005))
    b = marginal_truth(W, solve_value_tables(oracle_transitions(CFG), CFG.eta, W, step=0.0025))
    assert np.max(np.abs(a - b)) < 1e-6


def test_rk4_fourth_order():
    tabs = [solve_value_tables(oracle_transitions(CFG), CFG.eta, W, step=s) for s in (0.01, 0.005, 0.0025)]
    d1 = np.max(np.abs(tabs[0].v1 - tabs[1].v1[::2]))
    d2 = np.max(np.abs(tabs[1].v1 - tabs[2].v1[::2]))
    assert 12 < d1 / d2 < 20


def test_v1_matches_monte_carlo_at_minus_one(tables):
    n = 200000
    y = simulate_cohort(CFG.without_censoring(), n, seed=21, w=-1.0).outcome()
    se = y.std(ddof=1) / math.sqrt(n)
    assert abs(marginal_truth(-1.0, tables) - y.mean()) < 3 * se


def test_conditional_expectation_ill_matches_forward_simulation(tables):
    subject = ObservedSubject(0.0, ((0.0, 1), (1.0, 2)), 2.0, True)
    value = conditional_expectation(subject, 2.0, tables)
    n = 200000
    y = simulate_from_state(CFG, n, 13, 0.0, 2, 2.0, 1.0)
    se = y.std(ddof=1) / math.sqrt(n)
    assert abs(value - (1.0 + y.mean())) < 3 * se


def test_conditional_expectation_terminal_and_absorbing(tables):
    path = FullTrajectory(0.5, ((0.0, 1), (1.0, 2), (3.25, 3)), math.inf)
    assert conditional_expectation(path, CFG.eta, tables) == pytest.approx(2.25, abs=1e-12)
    assert conditional_expectation(path, 4.0, tables) == pytest.approx(2.25, abs=1e-12)
    ill = FullTrajectory(0.5, ((0.0, 1), (1.0, 2)), math.inf)
    assert conditional_expectation(ill, CFG.eta, tables) == pytest.approx(4.0, abs=1e-12)
    dead = FullTrajectory(0.5, ((0.0, 1), (1.0, 3)), math.inf)
    assert conditional_expectation(dead, 2.0, tables) == 0.0


def test_conditional_expectation_at_zero_is_marginal(tables):
    s = FullTrajectory(-1.3, ((0.0, 1),), math.inf)
    assert conditional_expectation(s, 0.0, tables) == pytest.approx(marginal_truth(-1.3, tables), abs=1e-12)


def test_range_errors(tables):
    s = FullTrajectory(0.0, ((0.0, 1),), math.inf)
    with pytest.raises(ValueError):
        conditional_expectation(s, 5.5, tables)
    with pytest.raises(ValueError):
        marginal_truth(4.5, tables)
    with pytest.raises(ValueError):
        tables.v2_at(1.0, 2.0, 0.0)


def test_solver_argument_errors():
    with pytest.raises(ValueError):
        solve_value_tables(oracle_transitions(CFG), CFG.eta, W, step=0.0)
    with pytest.raises(ValueError):
        solve_value_tables(oracle_transitions(CFG), CFG.eta, W, step=0.003)
    with pytest.raises(ValueError):
        solve_value_tables(oracle_transitions(CFG), CFG.eta, W[::-1])


class _BrokenHazard(OracleHazard):
    def rate(self, t, w, d=None):
        out = np.array(super().rate(t, w, d), dtype=float)
        return np.where(np.asarray(t) > 3.0, np.nan, out)


def test_non_finite_hazard_is_reported():
    mu12, mu13, _ = oracle_transitions(CFG)
    broken = _BrokenHazard(CFG, "mu23")
    with pytest.raises(HazardEvaluationError, match=r"mu23|t="):
        solve_value_tables((mu12, mu13, broken), CFG.eta, W)


def test_marginal_truth_interpolates_linearly(tables):
    a, b = marginal_truth(0.1, tables), marginal_truth(0.2, tables)
    assert marginal_truth(0.15, tables) == pytest.approx(0.5 * (a + b), abs=1e-12)
    out = marginal_truth(np.array([0.1, 0.2]), tables)
    assert out.shape == (2,)


def test_npz_roundtrip_and_long_rows(tmp_path):
    tab = solve_value_tables(oracle_transitions(CFG), CFG.eta, np.array([0.0]), step=0.05, s_step=0.5)
    tab.to_npz(tmp_path / "t.npz")
    back = ValueTables.from_npz(tmp_path / "t.npz")
    assert np.array_equal(back.v1, tab.v1) and np.array_equal(back.v2, tab.v2, equal_nan=True)
    assert back.eta == tab.eta and back.label == tab.label
    rows = tab.long_rows()
    assert len([r for r in rows if r[0] == "v1"]) == len(tab.grid_t)
    assert all(r[2] <= r[1] for r in rows if r[0] == "v2")


@given(st.floats(0, 5), st.floats(0, 1), st.floats(-4, 4))
@settings(max_examples=100, deadline=None)
def test_interpolated_values_within_bounds(t, frac, w):
    tab = _SHARED
    s = frac * t
    assert -1e-12 <= tab.v1_at(t, w) <= 5 - t + 1e-9
    assert -1e-12 <= tab.v2_at(t, s, w) <= 5 - t + 1e-9


_SHARED = solve_value_tables(oracle_transitions(CFG), CFG.eta, np.linspace(-4, 4, 17), step=0.01, s_step=0.1)
