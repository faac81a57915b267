"""Gaussian random fields and the simulation cases with known causal truth.

Generators return a :class:`SimOutput` whose ``data`` is an ordinary
:class:`~qlscm.stgrid.PanelDataset` (the hidden confounder is *not* among
its columns) plus the realised hidden values for diagnostics.

Conventions shared by all cases
-------------------------------
* sites sit on the integer lattice (1..nx) x (1..ny), default 50 x 20;
* time runs t = 1..m;
* every Gaussian field has covariance ``exp(-0.5 * ||s_i - s_j||)``, unit
  variance, and fields at different times are independent;
* ``N(mu, v)`` takes a variance as second argument, see
  :mod:`qlscm.distributions`.

Case 1 builds its second hidden component from a separate time-invariant
field, not from the time-varying exposure noise; see :func:`gen_case1`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .distributions import GevParams, gev_quantile, make_rng, normal_scale, uniform_from_gaussian
from .stgrid import Grid, PanelDataset, Site, write_panel_csv

DEFAULT_TAUS = tuple(round(0.1 * k, 1) for k in range(1, 10))
_JITTER_START = 1e-8
_JITTER_MAX = 1e-4


@dataclass(frozen=True)
class GpSpec:
    """Stationary covariance ``variance * exp(-rate * distance)``."""

    kernel: str = "exponential"
    rate: float = 0.5
    variance: float = 1.0
    mean: float = 0.0

    def __post_init__(self):
        if self.kernel != "exponential":
            raise ValueError(f"unsupported kernel {self.kernel!r}")
        if not (self.rate > 0 and self.variance > 0):
            raise ValueError("rate and variance must be positive")


def covariance_matrix(coords, spec: GpSpec = GpSpec()) -> np.ndarray:
    c = np.asarray(coords, dtype=float).reshape(-1, 2)
    dist = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1))
    return spec.variance * np.exp(-spec.rate * dist)


@lru_cache(maxsize=16)
def _cholesky_cached(coord_bytes: bytes, n: int, spec: GpSpec):
    coords = np.frombuffer(coord_bytes, dtype=float).reshape(n, 2)
    C = covariance_matrix(coords, spec)
    jitter = _JITTER_START
    while True:
        try:
            L = np.linalg.cholesky(C + jitter * np.eye(n))
            L.flags.writeable = False
            return L
        except np.linalg.LinAlgError:
            if jitter >= _JITTER_MAX:
                cond = np.linalg.cond(C)
                raise np.linalg.LinAlgError(
                    f"covariance factorisation failed with jitter {jitter:g}; condition number {cond:.3g}"
                ) from None
            jitter *= 2


def cholesky_factor(grid: Grid, spec: GpSpec = GpSpec()) -> np.ndarray:
    coords = np.ascontiguousarray(grid.coords, dtype=float)
    if coords.shape[0] == 0:
        raise ValueError("grid has no sites")
    return _cholesky_cached(coords.tobytes(), coords.shape[0], spec)


def sample_gp_fields(grid: Grid, spec: GpSpec, size: int, seed) -> np.ndarray:
    """``size`` independent field draws, shape (size, n_sites)."""
    L = cholesky_factor(grid, spec)
    z = make_rng(seed).standard_normal((len(grid), size))
    return spec.mean + (L @ z).T


def sample_gp_field(grid: Grid, spec: GpSpec = GpSpec(), seed=0) -> np.ndarray:
    """One zero-mean (by default) field draw at the grid sites."""
    return sample_gp_fields(grid, spec, 1, seed)[0]


@dataclass
class SimTruth:
    """Known marginal causal effect of a simulation case.

    ``beta1`` is a float for ``constant``/``zero`` kinds and a ``{tau: value}``
    dict for ``tau_function``; ``se`` holds Monte-Carlo standard errors of a
    tabulated truth.
    """

    kind: str
    beta1: float | dict
    beta0: float | None = None
    description: str = ""
    se: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("constant", "zero", "tau_function"):
            raise ValueError(f"unknown truth kind {self.kind!r}")
        if self.kind == "zero" and self.beta1 != 0:
            raise ValueError("zero truth must have beta1 == 0")

    def value(self, tau=None) -> float:
        """Truth for the quantile level ``tau`` (or the mean effect if None)."""
        if self.kind != "tau_function":
            return float(self.beta1)
        if tau is None:
            return 0.0 if self.beta0 is None else float(self.beta0)
        return float(self.beta1[round(float(tau), 10)])

    def to_dict(self):
        b1 = {repr(k): v for k, v in self.beta1.items()} if isinstance(self.beta1, dict) else self.beta1
        return {"kind": self.kind, "beta1": b1, "beta0": self.beta0,
                "description": self.description, "se": {repr(k): v for k, v in self.se.items()}}


@dataclass
class SimOutput:
    data: PanelDataset
    truth: SimTruth
    hidden: tuple
    case: str = ""
    seed: int | None = None
    mean_effect_truth: float | None = None

    def hidden_as_confounders(self) -> PanelDataset:
        """The panel with the realised hidden values appended as confounders."""
        names = [f"h{j + 1}" for j in range(self.hidden[0].shape[1])] if self.hidden else []
        return self.data.with_confounders(self.hidden, names)


def write_sim_output(sim: SimOutput, csv_path) -> Path:
    """Write the panel CSV plus ``<stem>.truth.json`` holding truth and seed."""
    csv_path = Path(csv_path)
    write_panel_csv(sim.data, csv_path)
    side = csv_path.with_name(csv_path.stem + ".truth.json")
    payload = {"case": sim.case, "seed": sim.seed, "truth": sim.truth.to_dict(),
               "mean_effect_truth": sim.mean_effect_truth}
    side.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return side


def _default_grid(grid):
    return Grid.regular(50, 20) if grid is None else grid


def _times(m):
    return np.arange(1, m + 1)


def _panel(grid, m, y, x):
    t = _times(m)
    return PanelDataset.from_arrays(grid, [t] * len(grid), list(y), list(x[..., None]))


def gen_case1(grid: Grid | None = None, m: int = 100, seed: int = 0) -> SimOutput:
    """Constant effect 1.5 under explicit hidden confounding.

    Hidden field ``(Ht, Hh) = (gamma, xi0 / 2 + sqrt(3)/2 * phi)`` where
    ``gamma, phi, xi0`` are independent time-invariant fields, then::

        X = exp(-|s|^2 / 1000) + (0.2 + 0.1 sin(2 pi t / 100)) Ht Hh + 0.5 xi_t
        Y = (1.5 + Ht Hh) X + Ht^2 + |Hh| delta_t

    with independent fields ``xi_t`` and ``delta_t`` at every time.  Using a
    separate ``xi0`` keeps the hidden confounder constant over time.
    """
    if m < 10:
        raise ValueError("need m >= 10")
    grid = _default_grid(grid)
    spec = GpSpec()
    static = sample_gp_fields(grid, spec, 3, make_rng(seed, 1))
    gamma, phi, xi0 = static
    xi_t = sample_gp_fields(grid, spec, m, make_rng(seed, 2)).T
    delta_t = sample_gp_fields(grid, spec, m, make_rng(seed, 3)).T
    h_t = gamma
    h_h = 0.5 * xi0 + np.sqrt(3.0) / 2.0 * phi
    t = _times(m)
    prod = (h_t * h_h)[:, None]
    s2 = (grid.coords ** 2).sum(axis=1)[:, None]
    x = np.exp(-s2 / 1000.0) + (0.2 + 0.1 * np.sin(2 * np.pi * t / 100.0)) * prod + 0.5 * xi_t
    y = (1.5 + prod) * x + (h_t ** 2)[:, None] + np.abs(h_h)[:, None] * delta_t
    hidden = tuple(np.repeat(np.array([[a, b]]), m, axis=0) for a, b in zip(h_t, h_h))
    truth = SimTruth("constant", 1.5, 1.0, "beta1 = 1.5 + E[Ht*Hh] = 1.5; beta0 = E[Ht^2 + |Hh| delta] = 1")
    return SimOutput(_panel(grid, m, y, x), truth, hidden, "case1", seed, 1.5)


CASE2_GEV = GevParams(0.0, 1.0, 1.2)


def gen_case2(grid: Grid | None = None, m: int = 100, seed: int = 0) -> SimOutput:
    """Null effect with heavy-tailed GEV(0, 1, 1.2) noise.

    ``H`` is a Gaussian field pushed to Unif(10, 20) margins,
    ``X = 1 + 5 sin(2 pi t / 100) + xi_t`` and
    ``Y = 50 + 2 N(-X/2 + H, 0.5) + X + 2H + 2 eps``; the X terms cancel.
    """
    if m < 10:
        raise ValueError("need m >= 10")
    grid = _default_grid(grid)
    n = len(grid)
    spec = GpSpec()
    h = uniform_from_gaussian(sample_gp_field(grid, spec, make_rng(seed, 1)), 10.0, 20.0)
    xi_t = sample_gp_fields(grid, spec, m, make_rng(seed, 2)).T
    t = _times(m)
    x = 1.0 + 5.0 * np.sin(2 * np.pi * t / 100.0) + xi_t
    z = make_rng(seed, 3).standard_normal((n, m))
    u = make_rng(seed, 4).random((n, m))
    eps = gev_quantile(np.where(u > 0, u, np.nextafter(0.0, 1.0)), CASE2_GEV)
    hc = h[:, None]
    y = 50.0 + 2.0 * (-0.5 * x + hc + normal_scale(0.5) * z) + x + 2.0 * hc + 2.0 * eps
    hidden = tuple(np.full((m, 1), v) for v in h)
    truth = SimTruth("zero", 0.0, None, "2 * (-0.5 X) + X = 0")
    return SimOutput(_panel(grid, m, y, x), truth, hidden, "case2", seed, 0.0)


def case2_site_scm(h: float, t: int = 1):
    """Structural model of one Case 2 site with realised hidden value ``h``.

    Returns ``draw(rng, size, x=None)``: with ``x=None`` the exposure follows
    its own mechanism (a unit-variance Gaussian around the seasonal mean),
    otherwise it is pinned to ``x`` and nothing else changes.
    """
    def draw(rng, size, x=None):
        if x is None:
            xv = 1.0 + 5.0 * np.sin(2 * np.pi * t / 100.0) + rng.standard_normal(size)
        else:
            xv = np.full(size, float(x))
        z = rng.standard_normal(size)
        u = rng.random(size)
        eps = gev_quantile(np.where(u > 0, u, np.nextafter(0.0, 1.0)), CASE2_GEV)
        return 50.0 + 2.0 * (-0.5 * xv + h + normal_scale(0.5) * z) + xv + 2.0 * h + 2.0 * eps

    return draw


def mc_interventional_quantile(model, x, tau, mc: int = 100_000, seed=0) -> float:
    """Empirical ``tau``-quantile of Y under do(X = x) for a site model.

    ``model`` follows the ``draw(rng, size, x=None)`` protocol of
    :func:`case2_site_scm`.
    """
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if mc < 10_000:
        raise ValueError("mc must be at least 1e4")
    y = model(make_rng(seed), mc, x=x)
    return float(np.quantile(y, tau))


def case3_x_mean_shift(grid: Grid | None = None) -> np.ndarray:
    return np.exp(-np.sqrt((_default_grid(grid).coords ** 2).sum(axis=1)) / 1000.0)


def gen_case3(grid: Grid | None = None, m: int = 100, seed: int = 0, taus=DEFAULT_TAUS,
              oracle_mc: int = 200_000, oracle_seed: int = 20240613) -> SimOutput:
    """Quantile-dependent effect through a Gamma term with X-dependent shape.

    ``H`` has Unif(50, 100) margins, ``X = 5 [exp(-|s|/1000) + 1 +
    5 sin(2 pi t / 100) + xi_t]`` and ``Y = 4 + 2 N(-X/2 + H, 0.5) +
    2 Gamma(0.005 (X + H), rate 0.01)``.  The mean effect is zero while the
    quantile effect grows with tau; the truth table comes from
    :func:`oracle_case3_curve` (cached, independent of ``seed``).
    """
    if m < 10:
        raise ValueError("need m >= 10")
    grid = _default_grid(grid)
    n = len(grid)
    spec = GpSpec()
    h = uniform_from_gaussian(sample_gp_field(grid, spec, make_rng(seed, 1)), 50.0, 100.0)
    xi_t = sample_gp_fields(grid, spec, m, make_rng(seed, 2)).T
    t = _times(m)
    x = 5.0 * (case3_x_mean_shift(grid)[:, None] + (1.0 + 5.0 * np.sin(2 * np.pi * t / 100.0)) + xi_t)
    hc = h[:, None]
    # X + H >= 15 except at astronomically unlikely noise levels
    shape = np.maximum(0.005 * (x + hc), 1e-12)
    g = make_rng(seed, 4).gamma(shape, 100.0)
    z = make_rng(seed, 3).standard_normal((n, m))
    y = 4.0 + 2.0 * (-0.5 * x + hc + normal_scale(0.5) * z) + 2.0 * g
    hidden = tuple(np.full((m, 1), v) for v in h)
    taus = tuple(float(v) for v in taus)
    vals, ses = oracle_case3_curve(taus, mc=oracle_mc, seed=oracle_seed)
    keys = [round(v, 10) for v in taus]
    truth = SimTruth("tau_function", dict(zip(keys, vals.tolist())), 0.0,
                     "tau-QPE from Monte-Carlo conditional quantiles given (x, h); mean effect 0",
                     dict(zip(keys, ses.tolist())))
    return SimOutput(_panel(grid, m, y, x), truth, hidden, "case3", seed, 0.0)


def case3_x_grid(n_x: int = 20, grid: Grid | None = None) -> np.ndarray:
    """Equiprobable points of the Case 3 exposure distribution.

    The marginal law of X over sites and t = 1..100 is a mixture of normals
    with sd 5; its quantiles at ``(j + 1/2) / n_x`` are found by bisection on
    the exact mixture CDF.
    """
    shift = case3_x_mean_shift(grid)
    t = _times(100)
    centres = 5.0 * (shift[:, None] + 1.0 + 5.0 * np.sin(2 * np.pi * t / 100.0)).ravel()
    probs = (np.arange(n_x) + 0.5) / n_x
    lo = np.full(n_x, centres.min() - 60.0)
    hi = np.full(n_x, centres.max() + 60.0)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        cdf = ndtr((mid[:, None] - centres[None, :]) / 5.0).mean(axis=1)
        below = cdf < probs
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


@lru_cache(maxsize=8)
def _case3_oracle(taus: tuple, mc: int, seed: int, n_h: int, n_x: int, delta: float,
                  n_batches: int, statistic: str):
    h_grid = np.linspace(50.0, 100.0, n_h)
    x_grid = case3_x_grid(n_x)
    per = mc // n_batches
    sd = normal_scale(0.5)
    q = np.asarray(taus)
    batch_est = np.zeros((n_batches, len(taus)))
    for hi, h in enumerate(h_grid):
        for xi, xc in enumerate(x_grid):
            rng = make_rng(seed, hi, xi)
            x1, x2 = xc - delta / 2, xc + delta / 2
            z = rng.standard_normal((n_batches, per))
            g1 = rng.gamma(0.005 * (x1 + h), 100.0, size=(n_batches, per))
            # Gamma(a) + Gamma(b) ~ Gamma(a + b): couples the two exposure levels
            g2 = g1 + rng.gamma(0.005 * delta, 100.0, size=(n_batches, per))
            y1 = 4.0 + 2.0 * (-0.5 * x1 + h + sd * z) + 2.0 * g1
            y2 = 4.0 + 2.0 * (-0.5 * x2 + h + sd * z) + 2.0 * g2
            if statistic == "mean":
                diff = (y2.mean(axis=1) - y1.mean(axis=1))[:, None]
            else:
                diff = (np.quantile(y2, q, axis=1) - np.quantile(y1, q, axis=1)).T
            batch_est += diff / delta
    batch_est /= n_h * n_x
    est = batch_est.mean(axis=0)
    se = batch_est.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return est, se


def oracle_case3_curve(taus=DEFAULT_TAUS, mc: int = 200_000, seed: int = 20240613, n_h: int = 21,
                       n_x: int = 20, delta: float = 1.0, n_batches: int = 10, statistic: str = "quantile"):
    """Brute-force Case 3 tau-QPE from conditional quantiles given (x, h).

    For ``n_h`` hidden values evenly spread over [50, 100] and ``n_x``
    equiprobable exposure values, ``Q_tau(Y | x +- delta/2, h)`` is estimated
    from ``mc`` Monte-Carlo draws each and differenced; the derivatives are
    averaged over the (h, x) grid.  The draws are split into ``n_batches``
    batches; the estimate is the batch average and the standard error the
    batch standard deviation over ``sqrt(n_batches)``.
    ``statistic="mean"`` replaces quantiles by means (mean-effect check).

    Returns ``(estimates, standard_errors)`` arrays aligned with ``taus``.
    """
    taus = tuple(float(t) for t in np.atleast_1d(taus))
    if any(not 0 < t < 1 for t in taus):
        raise ValueError("tau must lie in (0, 1)")
    if statistic not in ("quantile", "mean"):
        raise ValueError("statistic must be 'quantile' or 'mean'")
    est, se = _case3_oracle(taus, int(mc), int(seed), int(n_h), int(n_x), float(delta), int(n_batches), statistic)
    return est.copy(), se.copy()


def oracle_case3_qpe(tau: float, mc: int = 200_000, seed: int = 20240613) -> float:
    """Single-level convenience wrapper of :func:`oracle_case3_curve`.

    Each level's value does not depend on which other levels are requested,
    so levels on the default grid are read from the (cached) full curve.
    """
    if round(float(tau), 10) in DEFAULT_TAUS:
        est, _ = oracle_case3_curve(DEFAULT_TAUS, mc=mc, seed=seed)
        return float(est[DEFAULT_TAUS.index(round(float(tau), 10))])
    est, _ = oracle_case3_curve((tau,), mc=mc, seed=seed)
    return float(est[0])


def gen_example1(n: int = 50_000, seed: int = 0) -> SimOutput:
    """Single-site panel where the effect lives in the upper tail only.

    ``H ~ Unif(10, 15)``, ``X = H + E1`` with ``E1 ~ Unif(0.1, 1)``, and
    ``Y = Z1/2 + Z2/2 + E2/10`` with ``Z1 ~ N(-X/2 + H, 0.5)``,
    ``Z2 ~ Gamma((X + H)/20, rate 0.1)``, ``E2 ~ t_3``.  The conditional mean
    does not depend on X.  Each draw is one time point of one site, so here
    the hidden value varies over time; it is returned in ``hidden``.
    """
    if n < 100:
        raise ValueError("need n >= 100")
    h = make_rng(seed, 1).uniform(10.0, 15.0, n)
    x = h + make_rng(seed, 2).uniform(0.1, 1.0, n)
    z1 = -x / 2 + h + normal_scale(0.5) * make_rng(seed, 3).standard_normal(n)
    z2 = make_rng(seed, 4).gamma((x + h) / 20.0, 1.0 / 0.1)
    e2 = make_rng(seed, 5).standard_t(3, n)
    y = 0.5 * z1 + 0.5 * z2 + 0.1 * e2
    grid = Grid((Site("example1", (0.0, 0.0)),))
    data = PanelDataset.from_arrays(grid, [np.arange(1, n + 1)], [y], [x[:, None]])
    truth = SimTruth("zero", 0.0, None, "conditional mean slope 0.5 * (-0.5) + 0.5 * 0.5 = 0")
    return SimOutput(data, truth, (h[:, None],), "example1", seed, 0.0)


GEO_CONFOUNDERS = ("EVI", "PRCP", "WS", "TMAX")


def gen_geo_fixture(nx: int = 8, ny: int = 5, days: int = 365, step: int = 3, seed: int = 0,
                    origin=(-121.0, 37.0), spacing: float = 0.25, year: int = 2019) -> PanelDataset:
    """Synthetic panel in the layout of gridded satellite data.

    Sites sit on a ``spacing``-degree lon/lat lattice; times are ``YYYYMMDD``
    integers every ``step`` days through ``days`` days of ``year``.  The
    outcome ``AOD`` responds to the exposure ``FRP`` and to the confounders
    ``EVI, PRCP, WS, TMAX`` and to a hidden field that also drives FRP.  Sites
    in the western half carry region ``"west"``, the rest ``"east"``.
    """
    import datetime as _dt

    sites = []
    for j in range(ny):
        for i in range(nx):
            lon = origin[0] + i * spacing
            lat = origin[1] + j * spacing
            sites.append(Site(f"g{j:03d}_{i:03d}", (lon, lat), 1.0, "west" if i < nx / 2 else "east"))
    grid = Grid(tuple(sites), spacing=(spacing, spacing), origin=tuple(origin))
    start = _dt.date(year, 1, 1)
    dates = [start + _dt.timedelta(days=d) for d in range(0, days, step)]
    t = np.array([d.year * 10000 + d.month * 100 + d.day for d in dates], dtype=np.int64)
    doy = np.array([d.timetuple().tm_yday for d in dates], dtype=float)
    m, n = len(t), len(sites)
    # unit-lattice copy of the coordinates for the field covariance
    lattice = Grid(tuple(Site(s.id, ((s.coords[0] - origin[0]) / spacing, (s.coords[1] - origin[1]) / spacing))
                         for s in sites))
    spec = GpSpec()
    h = sample_gp_field(lattice, spec, make_rng(seed, 1))
    season = np.sin(2 * np.pi * (doy - 80.0) / 365.0)
    rng = make_rng(seed, 2)
    evi = 0.3 + 0.1 * season[None, :] + 0.05 * rng.standard_normal((n, m))
    prcp = rng.gamma(0.5, 4.0, (n, m))
    ws = 3.0 + rng.gamma(2.0, 1.0, (n, m))
    tmax = 22.0 + 8.0 * season[None, :] + 2.0 * sample_gp_fields(lattice, spec, m, make_rng(seed, 3)).T
    frp = np.exp(1.0 + 0.5 * h[:, None] + 0.3 * season[None, :] + 0.5 * rng.standard_normal((n, m)))
    noise = gev_quantile(np.clip(rng.random((n, m)), 1e-12, 1 - 1e-12), GevParams(0.0, 0.02, 0.3))
    aod = (0.15 + 0.004 * frp + 0.1 * evi - 0.003 * prcp + 0.002 * tmax + 0.05 * np.exp(0.3 * h)[:, None]
           + np.abs(noise))
    w = np.stack([evi, prcp, ws, tmax], axis=-1)
    return PanelDataset.from_arrays(grid, [t] * n, list(aod), list(frp[..., None]), list(w),
                                    ("FRP",), GEO_CONFOUNDERS)
