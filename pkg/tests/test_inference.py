import math

import numpy as np
import pytest
from scipy import stats

from qlscm.estimators import EstimationError
from qlscm.gpsim import gen_case1, gen_case2
from qlscm.inference import (
    BootstrapResult, BootstrapSpec, bootstrap_effect, ci_at_level, hill_curve, hill_estimator, hill_k_grid,
    resample_panel, stationary_bootstrap_blocks, stationary_bootstrap_indices, test_zero_effect,
    zero_effect_verdicts,
)
from qlscm.stgrid import Grid, PanelDataset, Site
from qlscm.distributions import GevParams, gev_sample
from oracles import hill_closed_geometric


def test_mean_block_length():
    _, lengths = stationary_bootstrap_blocks(500_000, 5.0, 1)
    assert lengths.size > 99_000
    assert abs(lengths.mean() - 5.0) < 0.05


def test_indices_valid_and_deterministic():
    for m in (2, 7, 100):
        for seed in range(20):
            idx = stationary_bootstrap_indices(m, 5.0, seed)
            assert idx.shape == (m,) and idx.min() >= 0 and idx.max() < m
    assert np.array_equal(stationary_bootstrap_indices(50, 3, 4), stationary_bootstrap_indices(50, 3, 4))
    with pytest.raises(ValueError):
        stationary_bootstrap_indices(1, 5, 0)


def test_blocks_wrap_around():
    idx = stationary_bootstrap_indices(10, 50.0, 3)
    steps = np.diff(idx) % 10
    # long blocks: almost all steps are +1 modulo m
    assert np.mean(steps == 1) > 0.7


def test_unit_block_is_iid_resampling():
    _, lengths = stationary_bootstrap_blocks(1000, 1.0, 2)
    assert np.all(lengths == 1)
    m, reps = 20, 10_000
    counts = np.zeros(m)
    for r in range(reps):
        counts += np.bincount(stationary_bootstrap_indices(m, 1.0, r), minlength=m)
    _, p = stats.chisquare(counts)
    assert p > 0.001


@pytest.fixture(scope="module")
def case2_small():
    return gen_case2(Grid.regular(6, 5), m=60, seed=1).data


def test_resample_panel_shares_indices_per_site(case2_small):
    boot = resample_panel(case2_small, 5.0, 3, 0, 0)
    for i in range(case2_small.n_sites):
        idx = np.searchsorted(case2_small.times[i], boot.times[i])
        assert np.array_equal(case2_small.y[i][idx], boot.y[i])
        assert np.array_equal(case2_small.x[i][idx], boot.x[i])


def test_bootstrap_deterministic_across_threads(case2_small):
    spec = BootstrapSpec(12, 5.0, 0.9, seed=8)
    a = bootstrap_effect(case2_small, "qpe", 0.5, spec, threads=1)
    b = bootstrap_effect(case2_small, "qpe", 0.5, spec, threads=4)
    c = bootstrap_effect(case2_small, "qpe", 0.5, spec)
    assert a.estimates.tobytes() == b.estimates.tobytes() == c.estimates.tobytes()
    assert a.ci_lower.tobytes() == b.ci_lower.tobytes()


def test_ci_monotone_in_level(case2_small):
    res = bootstrap_effect(case2_small, "ace", None, BootstrapSpec(60, 5.0, 0.99, seed=2))
    lo90, hi90 = ci_at_level(res, 0.90)
    assert np.all(res.ci_lower <= lo90) and np.all(hi90 <= res.ci_upper)
    assert res.estimates.shape == (60, 1)


def test_case2_median_effect_not_significant():
    data = gen_case2(Grid.regular(10, 10), m=100, seed=0).data
    res = bootstrap_effect(data, "qpe", 0.5, BootstrapSpec(250, 5.0, 0.99, seed=7))
    assert not res.significant[0]
    assert res.ci_lower[0] <= 0 <= res.ci_upper[0]


def test_case1_effect_significant():
    sim = gen_case1(Grid.regular(10, 10), m=100, seed=0)
    res = bootstrap_effect(sim.data, "qpe", 0.5, BootstrapSpec(250, 5.0, 0.99, seed=7))
    assert res.significant[0]
    # the bootstrap resamples time only, so it covers the realised spatial estimand
    realised = 1.5 + np.mean([h[0, 0] * h[0, 1] for h in sim.hidden])
    assert res.ci_lower[0] <= realised <= res.ci_upper[0]


def test_degenerate_data_collapses_ci():
    sites = tuple(Site(f"s{i}", (float(i), 0.0)) for i in range(3))
    x = [np.arange(1.0, 13.0) * (i + 1) for i in range(3)]
    data = PanelDataset.from_arrays(Grid(sites), [np.arange(12)] * 3, [2 * v for v in x], x)
    with pytest.warns(UserWarning, match="zero width"):
        res = bootstrap_effect(data, "ace", None, BootstrapSpec(20, 3.0, 0.99, seed=1))
    assert np.allclose(res.estimates, 2.0, atol=1e-12)
    assert res.significant[0]


def test_failed_replicates_are_redrawn():
    # a resample that misses the single x = 1 record is rank deficient
    sites = (Site("a", (0.0, 0.0)),)
    x = np.array([0.0] * 9 + [1.0])
    data = PanelDataset.from_arrays(Grid(sites), [np.arange(10)], [x + 0.1 * np.arange(10)], [x])
    res = bootstrap_effect(data, "ace", None, BootstrapSpec(20, 1.0, 0.9, seed=0))
    assert res.redraws > 0 and res.estimates.shape == (20, 1)


def test_redraw_budget_exhausted(case2_small, monkeypatch):
    import qlscm.inference as inf
    real = inf.spatial_effect
    calls = []

    def flaky(*args, **kw):
        calls.append(1)
        if len(calls) > 1:
            raise EstimationError("no usable sites")
        return real(*args, **kw)

    monkeypatch.setattr(inf, "spatial_effect", flaky)
    with pytest.raises(EstimationError, match="budget"):
        bootstrap_effect(case2_small, "ace", None, BootstrapSpec(3, 5.0, 0.9, seed=0))


def test_spec_invariants():
    with pytest.raises(ValueError):
        BootstrapSpec(replicates=1)
    with pytest.raises(ValueError):
        BootstrapSpec(level=1.0)
    with pytest.raises(ValueError):
        BootstrapSpec(expected_block=0.5)


def make_result(lo, hi):
    return BootstrapResult("qpe", 0.5, 0.99, np.zeros((2, 1)), np.array([0.5 * (lo + hi)]),
                           np.array([lo]), np.array([hi]), np.array([lo > 0 or hi < 0]))


@pytest.mark.parametrize("lo,hi,reject", [(0.2, 0.9, True), (-0.1, 0.3, False), (-0.4, 0.0, False),
                                          (-0.9, -0.2, True), (0.0, 0.5, False)])
def test_zero_effect_verdicts(lo, hi, reject):
    (v,) = test_zero_effect(make_result(lo, hi))
    assert v.reject is reject
    assert (v.ci_lower, v.ci_upper) == (lo, hi)
    assert zero_effect_verdicts(make_result(lo, hi))[0] == v


def test_hill_geometric_closed_form():
    data = 2.0 ** np.arange(1, 11)
    assert hill_estimator(data, 4) == pytest.approx(hill_closed_geometric(4), abs=1e-10)
    assert hill_estimator(data, 4) == pytest.approx(2.5 * math.log(2), abs=1e-10)


def test_hill_pareto_grid():
    n = 10_000
    p = (np.arange(1, n + 1) - 0.5) / n
    assert abs(hill_estimator(1.0 / (1.0 - p), 500) - 1.0) < 0.1


def test_hill_gev_sample():
    x = gev_sample(100_000, GevParams(0, 1, 1.2), 13)
    assert abs(hill_estimator(x, 5000) - 1.2) < 0.3


def test_hill_scale_invariance():
    x = gev_sample(5000, GevParams(0, 1, 0.5), 3)
    assert hill_estimator(3.7 * x, 200) == pytest.approx(hill_estimator(x, 200), abs=1e-12)


def test_hill_domain_and_ties():
    with pytest.raises(ValueError):
        hill_estimator([1.0, 2.0], 2)
    with pytest.raises(ValueError):
        hill_estimator([1.0, 2.0, 3.0], 0)
    with pytest.raises(ValueError):
        hill_estimator([0.0, -1.0, 0.0], 1)
    assert hill_estimator([5.0, 5.0, 5.0, 1.0], 2) == 0.0


def test_hill_k_grid_and_case2_positive():
    ks = hill_k_grid(1000)
    assert ks[0] == 10 and ks[-1] == 100
    y = np.concatenate(gen_case2(Grid.regular(10, 10), m=100, seed=0).data.y)
    ks, est = hill_curve(y)
    assert np.all(est > 0)
