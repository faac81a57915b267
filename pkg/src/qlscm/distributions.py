"""Seeded samplers and quantile functions used by the data-generating processes.

Every sampler takes a seed (or a ready ``numpy.random.Generator``) and is a
pure function of its arguments.  Seeds are expanded through
``numpy.random.SeedSequence`` into a Philox counter-based generator, so
independent sub-streams can be split off deterministically with
:func:`make_rng` and extra integer keys.

Normal variance convention
--------------------------
Wherever a generative equation writes ``N(mu, v)`` the second argument is read
as a *variance*; :data:`NORMAL_SECOND_ARG_IS_VARIANCE` centralises that reading
and :func:`normal_scale` converts it to a standard deviation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

NORMAL_SECOND_ARG_IS_VARIANCE = True


def make_rng(seed, *keys: int) -> np.random.Generator:
    """Return a Philox generator for ``seed`` and an optional key path.

    ``make_rng(s, 3, 7)`` is the stream for sub-task (3, 7) of master seed
    ``s``; distinct key paths give statistically independent streams and the
    mapping never depends on call order.  A ``Generator`` passed as ``seed``
    is returned unchanged when no keys are given.
    """
    if isinstance(seed, np.random.Generator):
        if not keys:
            return seed
        raise TypeError("cannot derive keyed sub-streams from a Generator; pass an int seed")
    if seed is None or int(seed) < 0:
        raise ValueError("seed must be a non-negative integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit child seed, e.g. for replicate ``r`` of a run."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0]) >> 1


def normal_scale(second_arg: float) -> float:
    """Standard deviation implied by the second argument of ``N(mu, .)``."""
    return float(np.sqrt(second_arg)) if NORMAL_SECOND_ARG_IS_VARIANCE else float(second_arg)


@dataclass(frozen=True)
class GevParams:
    mu: float = 0.0
    sigma: float = 1.0
    xi: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"GEV scale must be positive, got {self.sigma}")


@dataclass(frozen=True)
class GammaParams:
    """Gamma law with shape ``alpha`` and *rate* ``lam`` (mean alpha/lam)."""

    alpha: float
    lam: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.lam > 0):
            raise ValueError(f"Gamma shape and rate must be positive, got ({self.alpha}, {self.lam})")


def _check_prob(p):
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    return p


def gev_cdf(x, params: GevParams):
    """GEV distribution function, including the Gumbel limit at ``xi == 0``."""
    z = (np.asarray(x, dtype=float) - params.mu) / params.sigma
    if params.xi == 0.0:
        return np.exp(-np.exp(-z))
    t = params.xi * z
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # log1p keeps precision for shapes close to zero
        inner = np.where(t > -1, np.exp(-np.log1p(np.maximum(t, -1.0)) / params.xi), np.inf if params.xi > 0 else 0.0)
    return np.exp(-inner)


def gev_quantile(p, params: GevParams):
    """Inverse of :func:`gev_cdf`; strictly increasing in ``p``.

    Raises ``ValueError`` for ``p`` outside the open unit interval.
    """
    p = _check_prob(p)
    e = -np.log(p)
    if params.xi == 0.0:
        q = params.mu - params.sigma * np.log(e)
    else:
        # expm1 keeps precision when xi*log(e) is small
        q = params.mu + params.sigma * np.expm1(-params.xi * np.log(e)) / params.xi
    return q if q.ndim else float(q)


def gev_sample(n: int, params: GevParams, seed) -> np.ndarray:
    """Inverse-CDF draws from GEV(mu, sigma, xi)."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = make_rng(seed)
    u = rng.random(n)
    # random() can return exactly 0
    u = np.where(u > 0, u, np.nextafter(0.0, 1.0))
    return np.asarray(gev_quantile(u, params), dtype=float).reshape(n)


def gamma_sample(n: int, params: GammaParams, seed) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = make_rng(seed)
    return rng.gamma(params.alpha, 1.0 / params.lam, size=n)


def student_t_sample(n: int, df: float, seed) -> np.ndarray:
    if not df > 0:
        raise ValueError("degrees of freedom must be positive")
    if n < 0:
        raise ValueError("n must be non-negative")
    return make_rng(seed).standard_t(df, size=n)


def uniform_from_gaussian(z, a: float, b: float):
    """Map standard-normal values to Unif(a, b) margins via the normal CDF.

    Monotone, so the rank structure (and hence the spatial dependence ordering)
    of a Gaussian field is preserved.
    """
    if not a < b:
        raise ValueError(f"need a < b, got ({a}, {b})")
    out = a + (b - a) * ndtr(np.asarray(z, dtype=float))
    return out if np.ndim(out) else float(out)
