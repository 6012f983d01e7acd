"""NumPy reference implementations of the estimation kernels.

These mirror the compiled extension in ``_core.pyx`` step for step: same
iteration rules, same damping schedules, same termination tests, so either
backend can serve the estimators.  Keep the two files in sync.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"

_STEP_EPS = 1e-15
_BOUND_EPS = 1e-12


def _softplus(u):
    return np.logaddexp(0.0, u)


def _proj_grad_max(g, theta, lo, hi, maximize):
    """Largest feasible first-order improvement component (box KKT residual)."""
    worst = 0.0
    for j in range(theta.size):
        gj = g[j] if maximize else -g[j]
        at_lo = theta[j] <= lo[j] + _BOUND_EPS * (1.0 + abs(lo[j]))
        at_hi = theta[j] >= hi[j] - _BOUND_EPS * (1.0 + abs(hi[j]))
        if (at_lo and gj < 0.0) or (at_hi and gj > 0.0):
            continue
        worst = max(worst, abs(gj))
    return worst


def _chol_solve(H, g):
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return None
    y = np.linalg.solve(L, g)
    return np.linalg.solve(L.T, y)


def _solve_sym(H, g):
    out = _chol_solve(H, g)
    if out is not None:
        return out
    Hr = H + (1e-10 * np.trace(H) / H.shape[0] + 1e-300) * np.eye(H.shape[0])
    return _chol_solve(Hr, g)


def _newton_mle(loglik_grad_fisher, theta0, lo, hi, max_iter, tol):
    theta = np.clip(np.asarray(theta0, dtype=float), lo, hi)
    L, g, H = loglik_grad_fisher(theta)
    n_scale = 1.0 + abs(L)
    niter = 0
    converged = False
    for niter in range(1, max_iter + 1):
        if _proj_grad_max(g, theta, lo, hi, maximize=True) <= tol * n_scale:
            converged = True
            break
        step = _solve_sym(H, g)
        if step is None:
            step = g / (1.0 + np.abs(np.diag(H)))
        lam = 1.0
        accepted = False
        for _ in range(60):
            tnew = np.clip(theta + lam * step, lo, hi)
            if np.max(np.abs(tnew - theta)) <= _STEP_EPS * (1.0 + np.max(np.abs(theta))):
                break
            Lnew, gnew, Hnew = loglik_grad_fisher(tnew)
            if np.isfinite(Lnew) and Lnew > L - 1e-14 * n_scale:
                theta, L, g, H = tnew, Lnew, gnew, Hnew
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            converged = _proj_grad_max(g, theta, lo, hi, maximize=True) <= 1e3 * tol * n_scale
            break
    return theta, float(L), converged, niter


def fit_logit_mle(x, y, lo, hi, theta0, max_iter=200, tol=1e-10):
    """Box-projected Fisher-scoring Newton for the two-parameter logit model."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)

    def lgf(theta):
        u = theta[0] + theta[1] * x
        L = float(np.sum(y * u - _softplus(u)))
        m = 1.0 / (1.0 + np.exp(-u))
        r = y - m
        w = m * (1.0 - m)
        g = np.array([r.sum(), (r * x).sum()])
        sw, swx, swxx = w.sum(), (w * x).sum(), (w * x * x).sum()
        H = np.array([[sw, swx], [swx, swxx]])
        return L, g, H

    return _newton_mle(lgf, theta0, np.asarray(lo, float), np.asarray(hi, float), max_iter, tol)


def fit_poisson2_mle(x1, x2, y, lo, hi, theta0, max_iter=200, tol=1e-10):
    """Box-projected Fisher-scoring Newton for the two-covariate Poisson model."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    y = np.asarray(y, dtype=float)

    def lgf(theta):
        u = theta[0] + theta[1] * x1 + theta[2] * x2
        m = np.exp(u)
        L = float(np.sum(y * u - m))
        r = y - m
        g = np.array([r.sum(), (r * x1).sum(), (r * x2).sum()])
        H = np.array(
            [
                [m.sum(), (m * x1).sum(), (m * x2).sum()],
                [(m * x1).sum(), (m * x1 * x1).sum(), (m * x1 * x2).sum()],
                [(m * x2).sum(), (m * x1 * x2).sum(), (m * x2 * x2).sum()],
            ]
        )
        return L, g, H

    return _newton_mle(lgf, theta0, np.asarray(lo, float), np.asarray(hi, float), max_iter, tol)


def _lm_lse(resid_jac, theta0, lo, hi, max_iter, tol):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    theta = np.clip(np.asarray(theta0, dtype=float), lo, hi)
    r, J = resid_jac(theta)
    rss = float(r @ r)
    scale = 1.0 + rss
    lam = 1e-3
    niter = 0
    converged = False
    for niter in range(1, max_iter + 1):
        g = -2.0 * (J.T @ r)  # gradient of the sum of squares
        if _proj_grad_max(g, theta, lo, hi, maximize=False) <= tol * scale:
            converged = True
            break
        JtJ = J.T @ J
        Jtr = J.T @ r
        accepted = False
        for _ in range(50):
            A = JtJ + lam * (np.diag(np.diag(JtJ)) + 1e-30 * np.eye(theta.size))
            step = _chol_solve(A, Jtr)
            if step is not None:
                tnew = np.clip(theta + step, lo, hi)
                moved = np.max(np.abs(tnew - theta)) > _STEP_EPS * (1.0 + np.max(np.abs(theta)))
                if moved:
                    rnew, Jnew = resid_jac(tnew)
                    rss_new = float(rnew @ rnew)
                    if np.isfinite(rss_new) and rss_new < rss + 1e-14 * scale:
                        theta, r, J, rss = tnew, rnew, Jnew, rss_new
                        lam = max(lam * 0.3, 1e-12)
                        accepted = True
                        break
            lam *= 2.0
            if lam > 1e12:
                break
        if not accepted:
            g = -2.0 * (J.T @ r)
            converged = _proj_grad_max(g, theta, lo, hi, maximize=False) <= 1e3 * tol * scale
            break
    return theta, rss, converged, niter


def fit_mm_lse(x, y, lo, hi, theta0, max_iter=200, tol=1e-10):
    """Box-projected Levenberg least squares for the saturating-rate model."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)

    def rj(theta):
        den = theta[1] + x
        mu = theta[0] * x / den
        J = np.stack([x / den, -theta[0] * x / den**2], axis=1)
        return y - mu, J

    return _lm_lse(rj, theta0, lo, hi, max_iter, tol)


def fit_expdecay_lse(x, y, lo, hi, theta0, max_iter=200, tol=1e-10):
    """Box-projected Levenberg least squares for the exponential decay model."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)

    def rj(theta):
        e = np.exp(-theta[1] * x)
        mu = theta[0] * e
        J = np.stack([e, -theta[0] * x * e], axis=1)
        return y - mu, J

    return _lm_lse(rj, theta0, lo, hi, max_iter, tol)
