"""Independent reference computations used by the tests.

None of these call into the package: they re-derive the quantity from its
definition with a different algorithm (vertex enumeration, an LP solver,
numerical quadrature, closed forms).
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import integrate, optimize, stats


def pinball(u, tau):
    u = np.asarray(u, dtype=float)
    return float(np.sum(np.where(u >= 0, tau * u, (tau - 1) * u)))


def vertex_enumeration_qr(X, y, tau):
    """Minimum pinball objective over all exactly-interpolating basic solutions.

    The quantile-regression LP attains its optimum at a vertex, i.e. at a
    coefficient vector that fits some ``p`` observations exactly.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    m, p = X.shape
    best, arg = math.inf, None
    for rows in itertools.combinations(range(m), p):
        A = X[list(rows)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        b = np.linalg.solve(A, y[list(rows)])
        val = pinball(y - X @ b, tau)
        if val < best:
            best, arg = val, b
    return best, arg


def linprog_qr(X, y, tau):
    """Quantile regression as the primal LP, solved by HiGHS."""
    X = np.asarray(X, dtype=float)
    m, p = X.shape
    c = np.concatenate([np.zeros(p), np.full(m, tau), np.full(m, 1 - tau)])
    A = np.hstack([X, np.eye(m), -np.eye(m)])
    bounds = [(None, None)] * p + [(0, None)] * (2 * m)
    res = optimize.linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    assert res.status == 0, res.message
    return res.fun, res.x[:p]


def ols_2x2(x, y):
    """Simple-regression coefficients from the explicit 2x2 inverse of X'X."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, sx, sxx = len(x), x.sum(), (x * x).sum()
    sy, sxy = y.sum(), (x * y).sum()
    det = n * sxx - sx * sx
    return np.array([(sxx * sy - sx * sxy) / det, (n * sxy - sx * sy) / det])


def gev_quantile_closed(p, mu, sigma, xi):
    return mu + sigma * ((-math.log(p)) ** (-xi) - 1.0) / xi


def case2_conditional_cdf(y, x, h):
    """P(Y <= y | X = x, H = h) for the Case 2 site model, by quadrature.

    Given (x, h), Y = 50 + 4h + sqrt(2) Z + 2 eps with Z standard normal and
    eps ~ GEV(0, 1, 1.2); integrate the normal CDF against the GEV law in
    its probability scale.
    """
    c = 50.0 + 2.0 * (-0.5 * x + h) + x + 2.0 * h

    def f(u):
        e = gev_quantile_closed(u, 0.0, 1.0, 1.2)
        return stats.norm.cdf((y - c - 2.0 * e) / math.sqrt(2.0))

    val, _ = integrate.quad(f, 0.0, 1.0, limit=400, epsabs=1e-12, epsrel=1e-10, points=[1e-6, 1e-3, 0.5, 0.999])
    return val


def case2_conditional_quantile(tau, x, h):
    """Inverse of :func:`case2_conditional_cdf` and the density there."""
    c = 50.0 + 4.0 * h
    q = optimize.brentq(lambda v: case2_conditional_cdf(v, x, h) - tau, c - 50.0, c + 500.0, xtol=1e-10)
    d = 1e-3
    dens = (case2_conditional_cdf(q + d, x, h) - case2_conditional_cdf(q - d, x, h)) / (2 * d)
    return q, dens


def hill_closed_geometric(k, base=2.0):
    """Hill estimate on the sequence base^1..base^n: mean of i*log(base), i=1..k."""
    return sum(i * math.log(base) for i in range(1, k + 1)) / k
