import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from drcut.smooth import (
    EmptyWindowError,
    SingularDesignError,
    bandwidth_rule,
    fit_curve,
    kernel_weights,
    local_linear_fit,
    smoother_weights,
    write_curve_csv,
)


def test_bandwidth_rule_examples():
    assert bandwidth_rule(32, 1.0) == pytest.approx(32 ** (-2 / 9), rel=1e-15)
    assert abs(bandwidth_rule(32, 1.0) - 0.46294) < 1e-5
    ratio = bandwidth_rule(2000, 3.0) / bandwidth_rule(1000, 3.0)
    assert ratio == pytest.approx(2 ** (-2 / 9), rel=1e-14)
    assert abs(ratio - 0.85724) < 1e-5
    with pytest.raises(ValueError):
        bandwidth_rule(1, 1.0)
    with pytest.raises(ValueError):
        bandwidth_rule(10, 0.0)


def test_kernels():
    u = np.array([-1.5, -1.0, -0.5, 0.0, 0.5, 1.0])
    np.testing.assert_allclose(kernel_weights(u), [0, 0, 0.5625, 0.75, 0.5625, 0])
    np.testing.assert_allclose(kernel_weights(u, "triangular"), [0, 0, 0.5, 1, 0.5, 0])
    with pytest.raises(ValueError):
        kernel_weights(u, "gaussian")


@given(
    st.integers(0, 2**31 - 1), st.floats(-5, 5), st.floats(-5, 5), st.floats(0.4, 3.0),
    st.sampled_from(["epanechnikov", "triangular"]),
)
@settings(max_examples=100, deadline=None)
def test_reproduces_lines(seed, a, b, h, kernel):
    rng = np.random.default_rng(seed)
    w = rng.uniform(-2, 2, 60)
    w0 = float(rng.uniform(-1, 1))
    fit = local_linear_fit(w, a + b * w, w0, h, kernel)
    assume(not fit.local_constant)
    assert abs(fit.estimate - (a + b * w0)) < 1e-10
    assert abs(fit.weights.sum() - 1) < 1e-12
    assert abs(fit.weights @ (w - w0)) < 1e-12


def test_constant_data():
    rng = np.random.default_rng(1)
    w = rng.uniform(-1, 1, 80)
    fit = local_linear_fit(w, np.full(80, 7.0), 0.1, 0.5)
    assert fit.estimate == pytest.approx(7.0, abs=1e-13)
    assert 0 <= fit.se < 1e-12


def test_matches_dense_weighted_least_squares():
    rng = np.random.default_rng(7)
    w = rng.uniform(-1, 1, 50)
    y = np.sin(3 * w) + rng.normal(0, 0.3, 50)
    w0, h = 0.2, 0.6
    k = kernel_weights((w - w0) / h)
    x = np.column_stack([np.ones(50), w - w0])
    hat = np.linalg.solve(x.T @ (k[:, None] * x), x.T * k)
    fit = local_linear_fit(w, y, w0, h)
    np.testing.assert_allclose(fit.weights, hat[0], atol=1e-10)
    assert abs(fit.estimate - hat[0] @ y) < 1e-10
    # robust variance with local residuals
    resid = (y - x @ (hat @ y)) * (k > 0)
    assert fit.se == pytest.approx(math.sqrt(np.sum(hat[0] ** 2 * resid**2)), rel=1e-10)
    assert fit.sum_abs_weights == pytest.approx(np.abs(hat[0]).sum(), rel=1e-12)


def test_linearity_in_y():
    rng = np.random.default_rng(3)
    w = rng.uniform(-1, 1, 200)
    y, z = rng.normal(size=200), rng.normal(size=200)
    f = lambda v: local_linear_fit(w, v, 0.3, 0.4).estimate  # noqa: E731
    assert f(2.5 * y + z) == pytest.approx(2.5 * f(y) + f(z), abs=1e-12)


@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(0.1, 10))
@settings(max_examples=50, deadline=None)
def test_translation_and_scale_equivariance(seed, shift, scale):
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1, 1, 40)
    y = rng.normal(size=40)
    base = local_linear_fit(w, y, 0.1, 0.7)
    moved = local_linear_fit(scale * w + shift, y, scale * 0.1 + shift, scale * 0.7)
    np.testing.assert_allclose(moved.weights, base.weights, atol=1e-9)
    assert moved.estimate == pytest.approx(base.estimate, abs=1e-9)


def test_symmetric_design_gives_symmetric_weights():
    w = np.array([-0.6, -0.3, -0.1, 0.1, 0.3, 0.6])
    p = smoother_weights(w, 0.0, 1.0)
    np.testing.assert_allclose(p, p[::-1], atol=1e-15)


def test_single_point_window_falls_back():
    w = np.array([0.05, 2.0, 3.0])
    p = smoother_weights(w, 0.0, 0.5)
    np.testing.assert_array_equal(p, [1.0, 0.0, 0.0])
    fit = local_linear_fit(w, np.array([4.0, 1.0, 1.0]), 0.0, 0.5)
    assert fit.local_constant and fit.estimate == 4.0
    with pytest.raises(SingularDesignError):
        local_linear_fit(w, np.array([4.0, 1.0, 1.0]), 0.0, 0.5, fallback=False)


def test_tied_window_is_singular_without_fallback():
    w = np.array([0.2, 0.2, 0.2, 3.0])
    with pytest.raises(SingularDesignError):
        smoother_weights(w, 0.0, 0.5, fallback=False)


def test_empty_window():
    with pytest.raises(EmptyWindowError):
        local_linear_fit(np.array([2.0, 3.0]), np.array([1.0, 2.0]), 0.0, 0.5)
    with pytest.raises(ValueError):
        local_linear_fit(np.array([0.1, 0.2]), np.array([1.0, 2.0]), 0.0, 0.0)


def test_one_sided_windows():
    w = np.linspace(-1, 1, 41)
    right = smoother_weights(w, 0.0, 0.5, side="right")
    left = smoother_weights(w, 0.0, 0.5, side="left")
    assert np.all(right[w < 0] == 0) and np.all(left[w >= 0] == 0)
    assert right.sum() == pytest.approx(1.0) and left.sum() == pytest.approx(1.0)


def test_sum_abs_weights_bounded_on_uniform_designs():
    rng = np.random.default_rng(11)
    for n in (500, 2000, 10000):
        w = rng.uniform(-4, 4, n)
        h = bandwidth_rule(n, 8.0)
        for w0 in (-3.5, -1.0, 0.0, 2.0, 3.9):
            assert np.abs(smoother_weights(w, w0, h)).sum() < 4


def test_ci_coverage_gaussian():
    rng = np.random.default_rng(2024)
    hits = 0
    for _ in range(500):
        w = rng.uniform(-2, 2, 1000)
        y = np.sin(w) + rng.normal(0, 1, 1000)
        hits += local_linear_fit(w, y, 0.5, 0.4).covers(math.sin(0.5))
    assert 0.90 <= hits / 500 <= 0.99


def test_curve_csv(tmp_path):
    w = np.linspace(-1, 1, 101)
    fits = fit_curve(w, 2 * w, [-0.5, 0.0, 0.5], 0.3)
    write_curve_csv(tmp_path / "c.csv", fits)
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert rows[0] == "w,estimate,se,ci_lo,ci_hi"
    assert len(rows) == 4
    assert float(rows[3].split(",")[1]) == pytest.approx(1.0, abs=1e-12)
