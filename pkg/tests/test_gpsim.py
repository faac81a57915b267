import math

import numpy as np
import pytest
from scipy import stats

from qlscm.distributions import make_rng
from qlscm.gpsim import (
    DEFAULT_TAUS, GpSpec, case2_site_scm, gen_case1, gen_case2, gen_case3, gen_example1,
    mc_interventional_quantile, oracle_case3_curve, oracle_case3_qpe, sample_gp_field, sample_gp_fields,
)
from qlscm.qreg import design_matrix, fit_quantile
from qlscm.stgrid import Grid, Site
from oracles import case2_conditional_quantile

SMALL = Grid.regular(6, 4)


def test_single_site_field_is_standard_normal():
    g = Grid((Site("a", (0.0, 0.0)),))
    draws = sample_gp_fields(g, GpSpec(), 20_000, 3)[:, 0]
    assert abs(draws.mean()) < 0.03 and abs(draws.var() - 1) < 0.05
    assert np.ndim(sample_gp_field(g, GpSpec(), 1)) == 1


def test_two_site_correlation():
    g = Grid((Site("a", (0.0, 0.0)), Site("b", (2.0, 0.0))))
    draws = sample_gp_fields(g, GpSpec(), 100_000, 4)
    r = np.corrcoef(draws.T)[0, 1]
    assert abs(r - math.exp(-1)) < 0.02


def test_field_variance_is_stationary():
    draws = sample_gp_fields(Grid.regular(10, 10), GpSpec(), 10_000, 5)
    v = draws.var(axis=0)
    assert np.all(np.abs(v - 1) < 0.05)


def test_case1_truth_and_time_invariance():
    sim = gen_case1(SMALL, m=20, seed=1)
    assert sim.truth.beta1 == 1.5 and sim.truth.beta0 == 1.0
    for h in sim.hidden:
        assert np.max(np.abs(h - h[0])) == 0
    assert sim.data.n_sites == 24 and set(sim.data.lengths) == {20}


def test_case2_ranges_and_truth():
    sim = gen_case2(SMALL, m=15, seed=2)
    h = np.array([v[0, 0] for v in sim.hidden])
    assert np.all((h > 10) & (h < 20))
    assert sim.truth.kind == "zero" and sim.truth.value(0.3) == 0.0


def test_generators_are_deterministic():
    for gen in (gen_case1, gen_case2):
        a, b = gen(SMALL, 12, 9), gen(SMALL, 12, 9)
        assert a.data.equals(b.data)
        assert all(np.array_equal(u, v) for u, v in zip(a.hidden, b.hidden))
    assert not gen_case1(SMALL, 12, 9).data.equals(gen_case1(SMALL, 12, 10).data)


def test_min_m():
    with pytest.raises(ValueError):
        gen_case1(SMALL, m=5)


def test_case3_generator():
    sim = gen_case3(SMALL, m=20, seed=3)
    h = np.array([v[0, 0] for v in sim.hidden])
    assert np.all((h > 50) & (h < 100))
    assert sim.mean_effect_truth == 0.0   # 2 * (-0.5) + 2 * 0.005 / 0.01
    assert sim.truth.value(0.5) == pytest.approx(oracle_case3_qpe(0.5))
    assert sim.truth.kind == "tau_function"


def test_case3_oracle_properties():
    est, se = oracle_case3_curve(DEFAULT_TAUS)
    assert np.all(se < 0.01)
    assert est[-1] > est[0]
    again, _ = oracle_case3_curve(DEFAULT_TAUS)
    assert np.array_equal(est, again)
    mean_est, mean_se = oracle_case3_curve((0.5,), mc=50_000, statistic="mean")
    assert abs(mean_est[0]) < 0.05


def test_case3_oracle_levels_are_separable():
    pair, _ = oracle_case3_curve((0.3, 0.7), mc=20_000)
    single, _ = oracle_case3_curve((0.7,), mc=20_000)
    assert single[0] == pair[1]


def test_example1():
    sim = gen_example1(5000, seed=1)
    x = sim.data.x[0][:, 0]
    assert x.min() > 10.1 and x.max() < 16.0
    assert sim.truth.value() == 0.0
    with pytest.raises(ValueError):
        gen_example1(50)


def test_example1_upper_quantile_slope_positive():
    # a single realisation; positivity is typical rather than guaranteed
    sim = gen_example1(50_000, seed=0)
    d = sim.hidden_as_confounders()
    fit = fit_quantile(design_matrix(d.x[0], d.w[0]), d.y[0], 0.9)
    assert fit.coefficients[1] > 0


def test_mc_interventional_quantile_closed_form():
    def model(rng, size, x=None):
        xv = rng.standard_normal(size) if x is None else np.full(size, x)
        return xv + rng.standard_normal(size)

    for tau in (0.1, 0.5, 0.9):
        q = mc_interventional_quantile(model, 1.3, tau, mc=100_000, seed=2)
        assert abs(q - (1.3 + stats.norm.ppf(tau))) < 0.02
    y = model(make_rng(3), 100_000, x=0.0)
    assert abs(np.median(y) - y.mean()) < 0.02
    with pytest.raises(ValueError):
        mc_interventional_quantile(model, 0.0, 0.5, mc=100)


def test_interventional_equals_conditional_case2():
    """Under do(X = x) the site quantile equals the conditional quantile given (x, h)."""
    sim = gen_case2(SMALL, m=10, seed=4)
    sites = make_rng(11).choice(len(SMALL), 5, replace=False)
    mc = 100_000
    for i in sites:
        h = float(sim.hidden[i][0, 0])
        x = float(sim.data.x[i][0, 0])
        for tau in (0.1, 0.5, 0.9):
            q_do = mc_interventional_quantile(case2_site_scm(h), x, tau, mc=mc, seed=int(i) * 10 + int(tau * 10))
            q_cond, dens = case2_conditional_quantile(tau, x, h)
            se = math.sqrt(tau * (1 - tau) / mc) / dens
            assert abs(q_do - q_cond) < 3 * se
