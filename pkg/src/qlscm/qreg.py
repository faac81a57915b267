"""Linear quantile regression and least squares for per-site fits.

Quantile regression is solved as the linear program

    max_d  y'd   s.t.  X'd = 0,  tau - 1 <= d <= tau,

which is the dual of ``min_b sum rho_tau(y - X b)``.  The solver is a
Mehrotra predictor-corrector primal-dual interior point method working on
``a = d + (1 - tau)`` in the box ``[0, 1]``; the regression coefficients are
(minus) the multipliers of the equality constraints.  The duality gap
``sum rho_tau(y - X b) - y'd`` is a certificate of optimality.  After the
interior point phase the fit is snapped to a basic solution (an exact
interpolation of ``p`` observations) whenever that does not increase the
objective, so the returned coefficients are usually an exact LP vertex.

All solvers are vectorised over a leading batch axis, which is how many
sites with the same number of time points are fitted at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RANK_RTOL = 1e-10
_STEP_DAMP = 0.99995


class SingularDesignError(np.linalg.LinAlgError):
    """Design matrix is rank deficient; ``dependent_columns`` lists culprits."""

    def __init__(self, dependent_columns, message=None):
        self.dependent_columns = list(dependent_columns)
        super().__init__(message or f"rank-deficient design; dependent columns {self.dependent_columns}")


@dataclass
class QuantileFit:
    tau: float
    coefficients: np.ndarray
    objective: float
    iterations: int
    converged: bool
    neg_count: int
    zero_count: int
    pos_count: int
    gap: float = float("nan")

    @property
    def intercept(self):
        return float(self.coefficients[0])


@dataclass
class OlsFit:
    coefficients: np.ndarray
    residual_sum_squares: float


@dataclass
class BatchQuantileFit:
    """Per-element results of :func:`fit_quantile_batch`.

    Elements whose design was singular have NaN coefficients and an entry in
    ``errors`` keyed by batch index.
    """

    tau: float
    coefficients: np.ndarray
    objective: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    gap: np.ndarray
    errors: dict = field(default_factory=dict)


def pinball_loss(u, tau):
    """Check loss ``u * (tau - 1{u < 0})``, elementwise."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    u = np.asarray(u, dtype=float)
    out = np.where(u < 0, (tau - 1.0) * u, tau * u)
    return out if out.ndim else float(out)


def design_matrix(x, w=None) -> np.ndarray:
    """Stack ``[1, x, w]`` column-wise; ``x`` is (m,) or (m, d), ``w`` (m, k)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    cols = [np.ones((x.shape[0], 1)), x]
    if w is not None:
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if w.shape[1]:
            cols.append(w)
    return np.hstack(cols)


def dependent_columns(X) -> list[int]:
    """Columns involved in a numerical linear dependence (empty if full rank)."""
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    if X.shape[0] < p:
        return list(range(p))
    _, sv, vt = np.linalg.svd(X, full_matrices=False)
    null = vt[sv <= RANK_RTOL * max(sv[0], np.finfo(float).tiny)]
    if null.size == 0:
        return []
    return sorted(int(j) for j in np.flatnonzero(np.abs(null).max(axis=0) > 1e-8))


def check_rank(X) -> None:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("design must be a 2-D array")
    if X.shape[0] < X.shape[1]:
        raise SingularDesignError(range(X.shape[1]), f"{X.shape[0]} rows for {X.shape[1]} columns")
    if not np.all(np.isfinite(X)):
        raise ValueError("design contains non-finite entries")
    dep = dependent_columns(X)
    if dep:
        raise SingularDesignError(dep)


def _singular_mask(X):
    sv = np.linalg.svd(X, compute_uv=False)
    return sv[..., -1] <= RANK_RTOL * sv[..., 0]


def _max_step(v, dv):
    """Largest alpha in [0, 1] keeping ``v + alpha * dv >= 0`` (rowwise)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dv < 0, -v / dv, np.inf)
    return np.minimum(1.0, ratio.min(axis=-1))


def _solve(M, rhs):
    try:
        return np.linalg.solve(M, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return (np.linalg.pinv(M) @ rhs[..., None])[..., 0]


def _ip_phase(X, y, tau, tol, max_iter):
    B, m, p = X.shape
    Xt = np.swapaxes(X, 1, 2)
    b = (1.0 - tau) * X.sum(axis=1)
    a = np.full((B, m), 1.0 - tau)
    s = np.full((B, m), tau)
    q, r = np.linalg.qr(X)
    beta = np.linalg.solve(r, (np.swapaxes(q, 1, 2) @ y[..., None]))[..., 0]
    lam = -beta
    res = y - (X @ beta[..., None])[..., 0]
    scale = np.abs(res).mean(axis=1, keepdims=True) + 1e-8 * (1.0 + np.abs(y).max(axis=1, keepdims=True))
    z = np.maximum(-res, 0.0) + scale
    w = np.maximum(res, 0.0) + scale

    iters = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    gap = np.full(B, np.inf)
    active = np.arange(B)
    for it in range(max_iter + 1):
        Xa, Xta, ya = X[active], Xt[active], y[active]
        aa, sa, za, wa, la = a[active], s[active], z[active], w[active], lam[active]
        beta_a = -la
        primal = pinball_loss(ya - (Xa @ beta_a[..., None])[..., 0], tau).sum(axis=1)
        dual = (ya * (aa - (1.0 - tau))).sum(axis=1)
        g = primal - dual
        gap[active] = g
        done = g <= tol * (1.0 + np.abs(primal))
        converged[active[done]] = True
        if it == max_iter:
            break
        keep = ~done
        if not keep.any():
            break
        active = active[keep]
        Xa, Xta, ya = Xa[keep], Xta[keep], ya[keep]
        aa, sa, za, wa, la = aa[keep], sa[keep], za[keep], wa[keep], la[keep]
        iters[active] += 1

        rp = b[active] - (Xta @ aa[..., None])[..., 0]
        rd = -ya - (Xa @ la[..., None])[..., 0] - za + wa
        dinv = za / aa + wa / sa
        D = 1.0 / dinv
        M = Xta @ (D[..., None] * Xa)

        def direction(comp_x, comp_s):
            # comp_x, comp_s: right-hand sides of the linearised complementarity rows
            rhat = rd - comp_x / aa + comp_s / sa
            dl = _solve(M, rp + (Xta @ (D * rhat)[..., None])[..., 0])
            dx = D * ((Xa @ dl[..., None])[..., 0] - rhat)
            dz = (comp_x - za * dx) / aa
            dw = (comp_s + wa * dx) / sa
            return dl, dx, dz, dw

        dl, dx, dz, dw = direction(-aa * za, -sa * wa)
        ap = np.minimum(_max_step(aa, dx), _max_step(sa, -dx))
        ad = np.minimum(_max_step(za, dz), _max_step(wa, dw))
        mu = ((aa * za).sum(axis=1) + (sa * wa).sum(axis=1)) / (2 * m)
        apc, adc = ap[:, None], ad[:, None]
        mu_aff = (((aa + apc * dx) * (za + adc * dz)).sum(axis=1)
                  + ((sa - apc * dx) * (wa + adc * dw)).sum(axis=1)) / (2 * m)
        sigma = (mu_aff / mu) ** 3
        smu = (sigma * mu)[:, None]
        dl, dx, dz, dw = direction(smu - dx * dz - aa * za, smu + dx * dw - sa * wa)
        ap = _STEP_DAMP * np.minimum(_max_step(aa, dx), _max_step(sa, -dx))
        ad = _STEP_DAMP * np.minimum(_max_step(za, dz), _max_step(wa, dw))
        apc, adc = ap[:, None], ad[:, None]
        a[active] = aa + apc * dx
        s[active] = sa - apc * dx
        lam[active] = la + adc * dl
        z[active] = za + adc * dz
        w[active] = wa + adc * dw
    return -lam, iters, converged, gap, a


def _polish(X, y, tau, beta, objective):
    """Snap to the basic solution through the p smallest residuals if no worse."""
    B, m, p = X.shape
    res = y - (X @ beta[..., None])[..., 0]
    idx = np.argsort(np.abs(res), axis=1, kind="stable")[:, :p]
    Xb = np.take_along_axis(X, idx[..., None], axis=1)
    yb = np.take_along_axis(y, idx, axis=1)
    sv = np.linalg.svd(Xb, compute_uv=False)
    ok = sv[:, -1] > 1e-9 * sv[:, 0]
    if not ok.any():
        return beta, objective
    cand = beta.copy()
    cand[ok] = np.linalg.solve(Xb[ok], yb[ok][..., None])[..., 0]
    cobj = pinball_loss(y - (X @ cand[..., None])[..., 0], tau).sum(axis=1)
    better = ok & (cobj <= objective)
    beta = np.where(better[:, None], cand, beta)
    objective = np.where(better, cobj, objective)
    return beta, objective


def fit_quantile_batch(X, y, tau, tol=1e-11, max_iter=100, check=True) -> BatchQuantileFit:
    """Fit ``B`` independent quantile regressions sharing shape (m, p).

    ``X`` has shape (B, m, p) and ``y`` (B, m).  Each element is solved
    independently (its iterates never depend on the other elements), so the
    result for a site does not depend on which batch it is placed in.
    """
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    B, m, p = X.shape
    coef = np.full((B, p), np.nan)
    obj = np.full(B, np.nan)
    iters = np.zeros(B, dtype=int)
    conv = np.zeros(B, dtype=bool)
    gap = np.full(B, np.nan)
    errors = {}
    good = np.ones(B, dtype=bool)
    if check and B:
        if m < p:
            good[:] = False
        else:
            good = ~_singular_mask(X)
        for i in np.flatnonzero(~good):
            errors[int(i)] = SingularDesignError(dependent_columns(X[i]) if m >= p else range(p))
    gi = np.flatnonzero(good)
    if gi.size:
        beta, it, cv, g, _ = _ip_phase(X[gi], y[gi], tau, tol, max_iter)
        o = pinball_loss(y[gi] - (X[gi] @ beta[..., None])[..., 0], tau).sum(axis=1)
        beta, o = _polish(X[gi], y[gi], tau, beta, o)
        coef[gi], obj[gi], iters[gi], conv[gi], gap[gi] = beta, o, it, cv, g
    return BatchQuantileFit(tau, coef, obj, iters, conv, gap, errors)


def residual_sign_counts(residuals, scale=1.0):
    """(negative, zero, positive) counts, zero meaning ``|r| <= 1e-8 * scale``."""
    r = np.asarray(residuals, dtype=float)
    ztol = 1e-8 * scale
    zero = np.abs(r) <= ztol
    return int(np.sum(r < -ztol)), int(np.sum(zero)), int(np.sum(r > ztol))


def fit_quantile(X, y, tau, tol=1e-11, max_iter=100) -> QuantileFit:
    """Minimise ``sum rho_tau(y - X b)`` over ``b``.

    Parameters
    ----------
    X : (m, p) array
        Design matrix, intercept column included if wanted.
    y : (m,) array
    tau : float in (0, 1)
    tol : relative duality-gap tolerance of the interior point phase.
    max_iter : iteration cap; on exhaustion the best iterate is returned with
        ``converged=False``.

    Raises
    ------
    SingularDesignError
        If ``X`` is rank deficient.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.size:
        raise ValueError("X and y have different numbers of rows")
    check_rank(X)
    out = fit_quantile_batch(X[None], y[None], tau, tol=tol, max_iter=max_iter, check=False)
    beta = out.coefficients[0]
    res = y - X @ beta
    neg, zero, pos = residual_sign_counts(res, 1.0 + np.abs(y).max(initial=0.0))
    return QuantileFit(
        tau=float(tau),
        coefficients=beta,
        objective=float(out.objective[0]),
        iterations=int(out.iterations[0]),
        converged=bool(out.converged[0]),
        neg_count=neg,
        zero_count=zero,
        pos_count=pos,
        gap=float(out.gap[0]),
    )


def coordinate_descent_gain(X, y, tau, coef) -> float:
    """Largest objective decrease achievable by moving one coefficient.

    Each one-dimensional problem is convex and piecewise linear, so its exact
    minimum sits at one of the breakpoints ``r_i / X_ij``; all are evaluated.
    A value <= tolerance certifies coordinatewise optimality.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    r = y - X @ coef
    base = pinball_loss(r, tau).sum()
    best = 0.0
    for j in range(X.shape[1]):
        xj = X[:, j]
        nz = xj != 0
        if not nz.any():
            continue
        steps = r[nz] / xj[nz]
        vals = pinball_loss(r[None, :] - steps[:, None] * xj[None, :], tau).sum(axis=1)
        best = max(best, base - vals.min())
    return float(best)


def fit_ols_batch(X, y):
    """Least squares for a (B, m, p) stack via Householder QR.

    Returns ``(coefficients, rss, singular_mask)``; singular elements get NaN.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    B, m, p = X.shape
    coef = np.full((B, p), np.nan)
    rss = np.full(B, np.nan)
    if m < p:
        return coef, rss, np.ones(B, dtype=bool)
    singular = _singular_mask(X)
    gi = np.flatnonzero(~singular)
    if gi.size:
        q, r = np.linalg.qr(X[gi])
        qty = (np.swapaxes(q, 1, 2) @ y[gi][..., None])[..., 0]
        beta = np.linalg.solve(r, qty[..., None])[..., 0]
        res = y[gi] - (X[gi] @ beta[..., None])[..., 0]
        coef[gi] = beta
        rss[gi] = (res * res).sum(axis=1)
    return coef, rss, singular


def fit_ols(X, y) -> OlsFit:
    """Ordinary least squares through an orthogonal (QR) factorisation."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    check_rank(X)
    coef, rss, _ = fit_ols_batch(X[None], y[None])
    return OlsFit(coef[0], float(rss[0]))
