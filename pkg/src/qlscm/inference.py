"""Stationary-bootstrap confidence intervals, the zero-effect test and Hill's estimator.

The bootstrap resamples every site's time series independently (site series
may have different lengths) with blocks of geometric length and uniform
starts that wrap around the end of the series.  Replicate ``r`` of a run with
master seed ``s`` draws site ``i``'s indices from ``make_rng(s, r, a, i)``
where ``a`` counts redraw attempts, so the replicate matrix does not depend
on how replicates are scheduled across threads.
"""
from __future__ import annotations

import math
import os
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .distributions import make_rng
from .estimators import EstimationError, spatial_effect
from .stgrid import PanelDataset


@dataclass(frozen=True)
class BootstrapSpec:
    replicates: int = 250
    expected_block: float = 5.0
    level: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("need at least 2 bootstrap replicates")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if not self.expected_block >= 1:
            raise ValueError("expected_block must be >= 1")


@dataclass
class BootstrapResult:
    """Replicate slopes and percentile intervals for one estimator."""

    kind: str
    tau: float | None
    level: float
    estimates: np.ndarray          # (replicates, d)
    point: np.ndarray              # (d,)
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    significant: np.ndarray        # CI excludes 0
    exposure_names: tuple = ("x1",)
    redraws: int = 0
    warnings: list = field(default_factory=list)

    def summary(self, replicates: bool = False) -> dict:
        out = {
            "kind": self.kind,
            "tau": self.tau,
            "level": self.level,
            "n_replicates": int(self.estimates.shape[0]),
            "redraws": self.redraws,
            "exposures": {
                name: {
                    "point": float(self.point[j]),
                    "ci_lower": float(self.ci_lower[j]),
                    "ci_upper": float(self.ci_upper[j]),
                    "significant": bool(self.significant[j]),
                }
                for j, name in enumerate(self.exposure_names)
            },
            "warnings": list(self.warnings),
        }
        if replicates:
            out["estimates"] = self.estimates.tolist()
        return out


def stationary_bootstrap_blocks(m: int, expected_block: float, seed):
    """Block starts and (untruncated) geometric lengths covering ``m`` indices."""
    if m < 2:
        raise ValueError("series length must be at least 2")
    if not expected_block >= 1:
        raise ValueError("expected_block must be >= 1")
    rng = make_rng(seed)
    # m blocks always suffice since every block has length >= 1
    starts = rng.integers(0, m, size=m)
    lengths = rng.geometric(1.0 / expected_block, size=m)
    used = int(np.searchsorted(np.cumsum(lengths), m)) + 1
    return starts[:used], lengths[:used]


def stationary_bootstrap_indices(m: int, expected_block: float, seed) -> np.ndarray:
    """One stationary-bootstrap resample of ``range(m)``.

    With ``expected_block == 1`` every block has length one and this is
    ordinary resampling with replacement.
    """
    starts, lengths = stationary_bootstrap_blocks(m, expected_block, seed)
    offsets = np.arange(lengths.sum()) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    return ((np.repeat(starts, lengths) + offsets) % m)[:m]


def resample_panel(data: PanelDataset, expected_block: float, seed: int, *keys: int) -> PanelDataset:
    """Apply an independent index sequence to every site (shared by y, x, w)."""
    times, ys, xs, ws = [], [], [], []
    for i, t in enumerate(data.times):
        idx = stationary_bootstrap_indices(len(t), expected_block, make_rng(seed, *keys, i))
        times.append(t[idx])
        ys.append(data.y[i][idx])
        xs.append(data.x[i][idx])
        ws.append(data.w[i][idx])
    return PanelDataset(data.grid, tuple(times), tuple(ys), tuple(xs), tuple(ws),
                        data.exposure_names, data.confounder_names)


def _n_threads():
    try:
        return max(1, int(os.environ.get("QLSCM_THREADS", "1")))
    except ValueError:
        return 1


def _percentile_ci(est, level):
    alpha = 1.0 - level
    lo = np.quantile(est, alpha / 2, axis=0)
    hi = np.quantile(est, 1 - alpha / 2, axis=0)
    return lo, hi


def bootstrap_effect(data: PanelDataset, kind: str = "qpe", tau: float | None = 0.5,
                     spec: BootstrapSpec = BootstrapSpec(), weights=None, threads: int | None = None) -> BootstrapResult:
    """Percentile stationary-bootstrap CI for the spatial QPE (``kind="qpe"``) or ACE.

    A replicate whose spatial estimate fails outright is redrawn from a fresh
    sub-stream; more than ``10 * replicates`` attempts in total raise
    :class:`EstimationError`.  ``threads`` (default ``$QLSCM_THREADS`` or 1)
    only changes scheduling, never the result.
    """
    if np.any(data.lengths < 2):
        raise ValueError("every site needs at least 2 records")
    point = spatial_effect(data, kind, tau, weights).slopes
    budget = 10 * spec.replicates
    lock = threading.Lock()
    failures = [0]

    def one(r):
        a = 0
        while True:
            boot = resample_panel(data, spec.expected_block, spec.seed, r, a)
            try:
                return spatial_effect(boot, kind, tau, weights).slopes, a
            except EstimationError:
                with lock:
                    failures[0] += 1
                    if failures[0] > budget:
                        return None, a + 1
                a += 1

    threads = _n_threads() if threads is None else max(1, int(threads))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(one, range(spec.replicates)))
    else:
        out = [one(r) for r in range(spec.replicates)]
    if failures[0] > budget:
        raise EstimationError(f"bootstrap failed: redraw budget of {budget} exhausted")
    redraws = failures[0]
    est = np.vstack([v for v, _ in out])
    lo, hi = _percentile_ci(est, spec.level)
    notes = []
    for j, name in enumerate(data.exposure_names):
        if not lo[j] <= point[j] <= hi[j]:
            notes.append(f"{name}: point estimate {point[j]:.6g} lies outside its percentile CI")
        if hi[j] - lo[j] <= 1e-12 * (1.0 + abs(point[j])):
            notes.append(f"{name}: bootstrap CI has zero width")
    for msg in notes:
        warnings.warn(msg, stacklevel=2)
    return BootstrapResult(
        kind=kind, tau=None if kind == "ace" else float(tau), level=spec.level,
        estimates=est, point=np.asarray(point, dtype=float), ci_lower=lo, ci_upper=hi,
        significant=(lo > 0) | (hi < 0), exposure_names=tuple(data.exposure_names),
        redraws=redraws, warnings=notes,
    )


def ci_at_level(result: BootstrapResult, level: float):
    """Percentile CI from the same replicate set at another level."""
    return _percentile_ci(result.estimates, level)


@dataclass(frozen=True)
class Verdict:
    exposure: str
    reject: bool
    ci_lower: float
    ci_upper: float
    level: float


def zero_effect_verdicts(result: BootstrapResult) -> list:
    """Test H0: no effect, per exposure.

    Rejects iff the CI excludes 0; an endpoint exactly at 0 counts as
    containing it (closed interval, conservative).
    """
    return [
        Verdict(name, bool(result.ci_lower[j] > 0 or result.ci_upper[j] < 0),
                float(result.ci_lower[j]), float(result.ci_upper[j]), result.level)
        for j, name in enumerate(result.exposure_names)
    ]


# the conventional name; not a pytest test despite the prefix
test_zero_effect = zero_effect_verdicts
test_zero_effect.__test__ = False


def hill_estimator(data, k: int) -> float:
    """Hill's tail-index estimate from the ``k`` largest positive values.

    ``(1/k) sum_{i=1..k} log(X_(n-i+1) / X_(n-k))`` over the strictly positive
    part of ``data``.
    """
    x = np.asarray(data, dtype=float).ravel()
    x = np.sort(x[x > 0])[::-1]
    k = int(k)
    if k < 1:
        raise ValueError("k must be >= 1")
    if x.size < k + 1:
        raise ValueError(f"need at least k + 1 = {k + 1} positive values, have {x.size}")
    logs = np.log(x[:k + 1])
    return math.fsum(logs[:k] - logs[k]) / k


def hill_k_grid(n: int, lo: float = 0.01, hi: float = 0.10, num: int = 10) -> np.ndarray:
    """Distinct k values spanning ``lo * n`` to ``hi * n`` (at least 1, below n)."""
    ks = np.unique(np.ceil(np.linspace(lo, hi, num) * n).astype(int))
    return ks[(ks >= 1) & (ks < n)]


def hill_curve(data, ks=None):
    """``(ks, estimates)`` for a Hill plot; ``ks`` defaults to :func:`hill_k_grid`."""
    x = np.asarray(data, dtype=float).ravel()
    npos = int((x > 0).sum())
    if npos < 2:
        raise ValueError("need at least two positive values")
    ks = hill_k_grid(npos) if ks is None else np.asarray(ks, dtype=int)
    return ks, np.array([hill_estimator(x, k) for k in ks])
