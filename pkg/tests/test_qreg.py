import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qlscm.qreg import (
    SingularDesignError, coordinate_descent_gain, design_matrix, fit_ols, fit_ols_batch, fit_quantile,
    fit_quantile_batch, pinball_loss,
)
from oracles import linprog_qr, ols_2x2, pinball, vertex_enumeration_qr

TAUS = (0.1, 0.25, 0.5, 0.75, 0.9)


def random_instance(rng, m, p):
    X = np.column_stack([np.ones(m), rng.standard_normal((m, p - 1))])
    y = X @ rng.standard_normal(p) + rng.standard_t(3, m)
    return X, y


def test_pinball_examples():
    assert pinball_loss(0.0, 0.3) == 0
    assert pinball_loss(1.0, 0.9) == pytest.approx(0.9)
    assert pinball_loss(-1.0, 0.9) == pytest.approx(0.1)
    u = np.linspace(-3, 3, 61)
    assert np.all(pinball_loss(u, 0.37) >= 0)


def test_intercept_only_median():
    fit = fit_quantile(np.ones((5, 1)), [1, 2, 3, 4, 5], 0.5)
    assert fit.coefficients[0] == pytest.approx(3.0, abs=1e-9)
    assert fit.converged


@pytest.mark.parametrize("tau", TAUS)
def test_perfect_fit(tau):
    x = np.arange(1.0, 11.0)
    fit = fit_quantile(design_matrix(x), 2 * x, tau)
    assert np.allclose(fit.coefficients, [0.0, 2.0], atol=1e-9)
    assert fit.objective == pytest.approx(0.0, abs=1e-9)


def test_six_point_vertex_oracle():
    X = design_matrix([0.3, 1.1, 2.0, 2.7, 4.2, 5.0])
    y = np.array([1.0, 0.4, 2.9, 2.2, 5.1, 3.3])
    for tau in TAUS:
        fit = fit_quantile(X, y, tau)
        best, arg = vertex_enumeration_qr(X, y, tau)
        assert fit.objective == pytest.approx(best, abs=1e-10)
        assert np.allclose(fit.coefficients, arg, atol=1e-8)


def test_matches_linprog_on_larger_instances():
    rng = np.random.default_rng(3)
    for _ in range(10):
        X, y = random_instance(rng, 60, 3)
        tau = rng.uniform(0.05, 0.95)
        fit = fit_quantile(X, y, tau)
        ref, _ = linprog_qr(X, y, tau)
        assert fit.objective == pytest.approx(ref, rel=1e-9, abs=1e-9)


def test_fit_certificates():
    rng = np.random.default_rng(8)
    for _ in range(30):
        m = int(rng.integers(8, 80))
        X, y = random_instance(rng, m, int(rng.integers(1, 4)))
        tau = float(rng.uniform(0.05, 0.95))
        fit = fit_quantile(X, y, tau)
        assert fit.converged
        assert fit.neg_count <= tau * m + 1e-9
        assert fit.pos_count <= (1 - tau) * m + 1e-9
        assert fit.objective == pytest.approx(pinball(y - X @ fit.coefficients, tau), abs=1e-9)
        assert coordinate_descent_gain(X, y, tau, fit.coefficients) <= 1e-8 * (1 + fit.objective)


def test_rank_deficient_design():
    x = np.arange(6.0)
    X = np.column_stack([np.ones(6), x, 2 * x])
    with pytest.raises(SingularDesignError) as err:
        fit_quantile(X, np.arange(6.0), 0.5)
    assert err.value.dependent_columns
    with pytest.raises(SingularDesignError):
        fit_ols(X, np.arange(6.0))


def test_batch_reports_singular_members():
    rng = np.random.default_rng(1)
    X = np.stack([random_instance(rng, 12, 2)[0] for _ in range(3)])
    X[1, :, 1] = 1.0
    y = rng.standard_normal((3, 12))
    out = fit_quantile_batch(X, y, 0.5)
    assert set(out.errors) == {1}
    assert np.isnan(out.coefficients[1]).all()
    assert np.isfinite(out.coefficients[[0, 2]]).all()


def test_nonconvergence_flagged():
    rng = np.random.default_rng(2)
    X, y = random_instance(rng, 200, 3)
    fit = fit_quantile(X, y, 0.3, max_iter=1)
    assert not fit.converged


def test_ols_examples():
    x = np.array([0.0, 1, 2, 3])
    assert np.allclose(fit_ols(design_matrix(x), 2 * x + 1).coefficients, [1, 2], atol=1e-12)
    assert np.allclose(fit_ols(design_matrix([-1.0, 1.0]), [0.0, 0.0]).coefficients, 0.0, atol=1e-15)
    xs = np.array([0.5, 1.5, 2.0, 3.5, 4.0])
    ys = np.array([1.2, 1.9, 3.1, 3.9, 5.2])
    assert np.allclose(fit_ols(design_matrix(xs), ys).coefficients, ols_2x2(xs, ys), atol=1e-10)


def test_ols_residual_orthogonality():
    rng = np.random.default_rng(4)
    X, y = random_instance(rng, 50, 4)
    fit = fit_ols(X, y)
    r = y - X @ fit.coefficients
    for j in range(X.shape[1]):
        assert abs(X[:, j] @ r) <= 1e-8 * np.linalg.norm(X[:, j]) * np.linalg.norm(r)
    assert fit.residual_sum_squares == pytest.approx(r @ r, rel=1e-10)
    coef, rss, singular = fit_ols_batch(X[None], y[None])
    assert not singular.any() and np.allclose(coef[0], fit.coefficients)


def test_monotone_fitted_value_at_mean():
    rng = np.random.default_rng(6)
    for _ in range(5):
        X, y = random_instance(rng, 200, 3)
        xbar = X.mean(axis=0)
        vals = [xbar @ fit_quantile(X, y, t).coefficients for t in np.arange(1, 10) / 10]
        assert np.all(np.diff(vals) >= -1e-9)


# ---------------------------------------------------------------- properties

instances = st.tuples(st.integers(0, 2**32 - 1), st.integers(5, 40), st.integers(1, 3),
                      st.floats(0.05, 0.95))


def check_transformed(fit, X, y, tau, expected, unique_atol):
    """``expected`` must be an optimum of the transformed problem; when the
    minimiser is unique (tau * m not an integer) it must also equal the fit."""
    assert pinball(y - X @ expected, tau) == pytest.approx(fit.objective, rel=1e-9, abs=1e-9)
    tm = tau * len(y)
    if abs(tm - round(tm)) > 1e-9:
        assert np.allclose(fit.coefficients, expected, rtol=1e-9, atol=unique_atol)


@settings(max_examples=60, deadline=None)
@given(instances, st.floats(0.1, 50.0))
def test_scale_equivariance(inst, c):
    seed, m, p, tau = inst
    X, y = random_instance(np.random.default_rng(seed), m, p)
    base = fit_quantile(X, y, tau)
    scaled = fit_quantile(X, c * y, tau)
    assert scaled.objective == pytest.approx(c * base.objective, rel=1e-9, abs=1e-9)
    check_transformed(scaled, X, c * y, tau, c * base.coefficients, 1e-9 * c)
    flipped = fit_quantile(X, -y, 1 - tau)
    assert flipped.objective == pytest.approx(base.objective, rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(instances, st.floats(-100.0, 100.0))
def test_shift_equivariance(inst, a):
    seed, m, p, tau = inst
    X, y = random_instance(np.random.default_rng(seed), m, p)
    base = fit_quantile(X, y, tau)
    shifted = fit_quantile(X, y + a, tau)
    assert shifted.objective == pytest.approx(base.objective, rel=1e-9, abs=1e-9)
    expected = base.coefficients.copy()
    expected[0] += a
    check_transformed(shifted, X, y + a, tau, expected, 1e-9 * (1 + abs(a)))


@settings(max_examples=60, deadline=None)
@given(instances)
def test_regression_equivariance(inst):
    seed, m, p, tau = inst
    rng = np.random.default_rng(seed)
    X, y = random_instance(rng, m, p)
    gamma = rng.uniform(-5, 5, p)
    base = fit_quantile(X, y, tau)
    moved = fit_quantile(X, y + X @ gamma, tau)
    assert moved.objective == pytest.approx(base.objective, rel=1e-9, abs=1e-9)
    check_transformed(moved, X, y + X @ gamma, tau, base.coefficients + gamma, 1e-9)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 8), st.integers(1, 3), st.floats(0.05, 0.95))
def test_lp_vertex_property(seed, m, p, tau):
    p = min(p, m - 1)
    X, y = random_instance(np.random.default_rng(seed), m, p)
    fit = fit_quantile(X, y, tau)
    best, _ = vertex_enumeration_qr(X, y, tau)
    assert fit.objective == pytest.approx(best, abs=1e-8)
