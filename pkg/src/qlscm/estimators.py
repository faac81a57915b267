"""Spatial quantile partial effect (tau-QPE) and average causal effect (ACE).

Both estimators fit one regression per site on the design ``[1, X, W]``
using that site's time replicates, keep the exposure slopes, and average them
over sites with weights proportional to cell area.  Sites are fitted in
batches of equal series length; a site's result never depends on the
other sites, and the weighted sums use ``math.fsum`` so that the aggregate is
exactly invariant to site order.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .qreg import design_matrix, fit_ols_batch, fit_quantile, fit_quantile_batch
from .stgrid import PanelDataset, cell_areas


class EstimationError(RuntimeError):
    pass


@dataclass
class SpatialEffect:
    """Area-weighted aggregate of per-site slopes.

    ``slopes[j] == sum_i weights[i] * site_slopes[i, j] / sum_i weights[i]``.
    The averaged ``intercept`` is reported for completeness only.
    """

    kind: str
    tau: float | None
    slopes: np.ndarray
    intercept: float
    site_slopes: np.ndarray
    weights: np.ndarray
    site_ids: list
    n_used: int
    skipped_sites: list = field(default_factory=list)
    exposure_names: tuple = ("x1",)

    @property
    def slope(self) -> float:
        """The single slope when there is one exposure."""
        if self.slopes.size != 1:
            raise ValueError("several exposures; use .slopes")
        return float(self.slopes[0])

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "tau": self.tau,
            "slopes": dict(zip(self.exposure_names, map(float, self.slopes))),
            "intercept": float(self.intercept),
            "n_used": self.n_used,
            "n_skipped": len(self.skipped_sites),
        }


def weighted_mean(values, weights) -> np.ndarray:
    """Column-wise weighted mean with exactly rounded (order-free) sums."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    den = math.fsum(weights)
    if values.ndim == 1:
        return np.array(math.fsum(values * weights) / den)
    return np.array([math.fsum(values[:, j] * weights) / den for j in range(values.shape[1])])


def _resolve_weights(data: PanelDataset, weights):
    if weights is None:
        return data.grid.areas
    if isinstance(weights, str):
        return cell_areas(data.grid, weights)
    w = np.asarray(weights, dtype=float)
    if w.shape != (data.n_sites,) or np.any(~(w > 0)):
        raise ValueError("weights must be one positive number per site")
    return w


def site_coefficients(data: PanelDataset, kind: str = "qpe", tau: float | None = 0.5, tol=1e-11, max_iter=100):
    """Fit every site; return ``(coef (n, p), reasons)``.

    ``reasons`` maps a site index to the reason it produced no estimate
    (rank deficiency or non-convergence); such rows of ``coef`` are NaN.
    """
    if kind not in ("qpe", "ace"):
        raise ValueError("kind must be 'qpe' or 'ace'")
    if kind == "qpe" and not (tau is not None and 0 < tau < 1):
        raise ValueError("tau must lie in (0, 1)")
    n = data.n_sites
    p = 1 + data.d + data.k
    coef = np.full((n, p), np.nan)
    reasons = {}
    lengths = data.lengths
    for m in np.unique(lengths):
        idx = np.flatnonzero(lengths == m)
        if m < p:
            for i in idx:
                reasons[int(i)] = f"only {m} records for {p} coefficients"
            continue
        X = np.empty((idx.size, m, p))
        X[:, :, 0] = 1.0
        X[:, :, 1:1 + data.d] = np.stack([data.x[i] for i in idx])
        if data.k:
            X[:, :, 1 + data.d:] = np.stack([data.w[i] for i in idx])
        Y = np.stack([data.y[i] for i in idx])
        if kind == "qpe":
            fit = fit_quantile_batch(X, Y, tau, tol=tol, max_iter=max_iter)
            coef[idx] = fit.coefficients
            for j, err in fit.errors.items():
                reasons[int(idx[j])] = f"rank deficient (columns {err.dependent_columns})"
            for j in np.flatnonzero(~fit.converged):
                if int(j) not in fit.errors:
                    reasons[int(idx[j])] = "quantile regression did not converge"
                    coef[idx[j]] = np.nan
        else:
            c, _, singular = fit_ols_batch(X, Y)
            coef[idx] = c
            for j in np.flatnonzero(singular):
                reasons[int(idx[j])] = "rank deficient"
    return coef, reasons


def site_qpe(x, y, w=None, tau: float = 0.5):
    """Quantile regression at one site; returns ``(slopes (d,), intercept)``."""
    fit = fit_quantile(design_matrix(x, w), y, tau)
    x = np.asarray(x)
    d = 1 if x.ndim == 1 else x.shape[1]
    return fit.coefficients[1:1 + d].copy(), float(fit.coefficients[0])


def _aggregate(data, kind, tau, weights, coef, reasons) -> SpatialEffect:
    wts = _resolve_weights(data, weights)
    used = np.array([i not in reasons for i in range(data.n_sites)], dtype=bool)
    if not used.any():
        raise EstimationError("no usable sites")
    skipped = [(data.grid.sites[i].id, reasons[i]) for i in sorted(reasons)]
    site_slopes = coef[used, 1:1 + data.d]
    wu = wts[used]
    return SpatialEffect(
        kind=kind,
        tau=None if kind == "ace" else float(tau),
        slopes=weighted_mean(site_slopes, wu),
        intercept=float(weighted_mean(coef[used, 0], wu)),
        site_slopes=site_slopes,
        weights=wu,
        site_ids=[s.id for s, u in zip(data.grid.sites, used) if u],
        n_used=int(used.sum()),
        skipped_sites=skipped,
        exposure_names=tuple(data.exposure_names),
    )


def spatial_qpe(data: PanelDataset, tau: float = 0.5, weights=None, **fit_opts) -> SpatialEffect:
    """Area-weighted spatial tau-QPE.

    ``weights`` defaults to the grid cell areas; a scheme name accepted by
    :func:`~qlscm.stgrid.cell_areas` or an explicit positive vector also work.
    Sites whose fit fails are skipped and listed in ``skipped_sites``.
    """
    coef, reasons = site_coefficients(data, "qpe", tau, **fit_opts)
    return _aggregate(data, "qpe", tau, weights, coef, reasons)


def spatial_ace(data: PanelDataset, weights=None) -> SpatialEffect:
    """Area-weighted average of per-site least-squares slopes."""
    coef, reasons = site_coefficients(data, "ace", None)
    return _aggregate(data, "ace", None, weights, coef, reasons)


def spatial_effect(data: PanelDataset, kind: str, tau: float | None = None, weights=None) -> SpatialEffect:
    if kind == "qpe":
        return spatial_qpe(data, tau, weights)
    if kind == "ace":
        return spatial_ace(data, weights)
    raise ValueError("kind must be 'qpe' or 'ace'")


@dataclass
class RegionReport:
    """Per-region estimates: ``effects[region]["ace"]`` and ``[region][tau]``."""

    effects: dict
    site_counts: dict
    unlabeled: int
    warnings: list = field(default_factory=list)


def regional_effects(data: PanelDataset, region_map: dict | None = None, taus=(0.1, 0.5, 0.9),
                     weights=None, regions=None) -> RegionReport:
    """Run the QPE (each tau) and the ACE independently within every region.

    ``region_map`` maps site id to label and defaults to the sites' own
    ``region`` attribute; sites without a label are left out and counted.
    Requested ``regions`` without sites are reported in ``warnings``.
    """
    if region_map is None:
        region_map = {s.id: s.region for s in data.grid.sites if s.region is not None}
    known = set(data.grid.ids)
    notes = [f"region map lists unknown site {sid!r}" for sid in sorted(set(region_map) - known)]
    wts = _resolve_weights(data, weights)
    members: dict = {}
    unlabeled = 0
    for i, s in enumerate(data.grid.sites):
        lab = region_map.get(s.id)
        if lab is None or lab == "":
            unlabeled += 1
            continue
        members.setdefault(lab, []).append(i)
    labels = sorted(members) if regions is None else list(regions)
    effects, counts = {}, {}
    for lab in labels:
        idx = members.get(lab, [])
        if not idx:
            notes.append(f"region {lab!r} has no sites; omitted")
            continue
        sub = data.subset(idx)
        sw = wts[idx]
        entry = {"ace": spatial_ace(sub, sw)}
        for tau in taus:
            entry[float(tau)] = spatial_qpe(sub, float(tau), sw)
        effects[lab] = entry
        counts[lab] = len(idx)
    for msg in notes:
        warnings.warn(msg, stacklevel=2)
    return RegionReport(effects, counts, unlabeled, notes)
