# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled estimation kernels: the hot inner loops of the adaptive drivers.

Mirrors ``_pyref.py`` step for step (same iteration rules, damping schedules
and termination tests).  Keep the two files in sync.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log1p, sqrt, isfinite

BACKEND_NAME = "compiled"

cdef double STEP_EPS = 1e-15
cdef double BOUND_EPS = 1e-12


cdef inline double softplus(double u) nogil:
    if u > 0.0:
        return u + log1p(exp(-u))
    return log1p(exp(u))


cdef inline double expit(double u) nogil:
    cdef double e
    if u >= 0.0:
        return 1.0 / (1.0 + exp(-u))
    e = exp(u)
    return e / (1.0 + e)


cdef double proj_grad_max(double* g, double* theta, double* lo, double* hi,
                          int p, bint maximize) nogil:
    cdef double worst = 0.0, gj
    cdef bint at_lo, at_hi
    cdef int j
    for j in range(p):
        gj = g[j] if maximize else -g[j]
        at_lo = theta[j] <= lo[j] + BOUND_EPS * (1.0 + fabs(lo[j]))
        at_hi = theta[j] >= hi[j] - BOUND_EPS * (1.0 + fabs(hi[j]))
        if (at_lo and gj < 0.0) or (at_hi and gj > 0.0):
            continue
        if fabs(gj) > worst:
            worst = fabs(gj)
    return worst


cdef bint chol_solve(double* H, double* g, double* out, int p) nogil:
    """Cholesky solve for symmetric p x p (p <= 3), row-major H."""
    cdef double l00, l10, l11, l20, l21, l22, y0, y1, y2
    if p == 2:
        if H[0] <= 0.0:
            return False
        l00 = sqrt(H[0])
        l10 = H[2] / l00
        l11 = H[3] - l10 * l10
        if l11 <= 0.0:
            return False
        l11 = sqrt(l11)
        y0 = g[0] / l00
        y1 = (g[1] - l10 * y0) / l11
        out[1] = y1 / l11
        out[0] = (y0 - l10 * out[1]) / l00
        return True
    if H[0] <= 0.0:
        return False
    l00 = sqrt(H[0])
    l10 = H[3] / l00
    l20 = H[6] / l00
    l11 = H[4] - l10 * l10
    if l11 <= 0.0:
        return False
    l11 = sqrt(l11)
    l21 = (H[7] - l20 * l10) / l11
    l22 = H[8] - l20 * l20 - l21 * l21
    if l22 <= 0.0:
        return False
    l22 = sqrt(l22)
    y0 = g[0] / l00
    y1 = (g[1] - l10 * y0) / l11
    y2 = (g[2] - l20 * y0 - l21 * y1) / l22
    out[2] = y2 / l22
    out[1] = (y1 - l21 * out[2]) / l11
    out[0] = (y0 - l10 * out[1] - l20 * out[2]) / l00
    return True


cdef bint solve_sym(double* H, double* g, double* out, int p) nogil:
    cdef double Hr[9]
    cdef double tr = 0.0
    cdef int j
    if chol_solve(H, g, out, p):
        return True
    for j in range(p):
        tr += H[j * p + j]
    for j in range(p * p):
        Hr[j] = H[j]
    for j in range(p):
        Hr[j * p + j] += 1e-10 * tr / p + 1e-300
    return chol_solve(Hr, g, out, p)


ctypedef void (*lgf_t)(double* theta, double[::1] x1, double[::1] x2,
                       double[::1] y, int n, double* L, double* g, double* H) nogil


cdef void logit_lgf(double* theta, double[::1] x1, double[::1] x2,
                    double[::1] y, int n, double* L, double* g, double* H) nogil:
    cdef double u, m, r, w, xi
    cdef int i
    L[0] = 0.0
    g[0] = 0.0
    g[1] = 0.0
    H[0] = 0.0
    H[1] = 0.0
    H[3] = 0.0
    for i in range(n):
        xi = x1[i]
        u = theta[0] + theta[1] * xi
        L[0] += y[i] * u - softplus(u)
        m = expit(u)
        r = y[i] - m
        w = m * (1.0 - m)
        g[0] += r
        g[1] += r * xi
        H[0] += w
        H[1] += w * xi
        H[3] += w * xi * xi
    H[2] = H[1]


cdef void poisson2_lgf(double* theta, double[::1] x1, double[::1] x2,
                       double[::1] y, int n, double* L, double* g, double* H) nogil:
    cdef double u, m, r, a, b
    cdef int i, j
    L[0] = 0.0
    for j in range(3):
        g[j] = 0.0
    for j in range(9):
        H[j] = 0.0
    for i in range(n):
        a = x1[i]
        b = x2[i]
        u = theta[0] + theta[1] * a + theta[2] * b
        m = exp(u)
        L[0] += y[i] * u - m
        r = y[i] - m
        g[0] += r
        g[1] += r * a
        g[2] += r * b
        H[0] += m
        H[1] += m * a
        H[2] += m * b
        H[4] += m * a * a
        H[5] += m * a * b
        H[8] += m * b * b
    H[3] = H[1]
    H[6] = H[2]
    H[7] = H[5]


cdef tuple newton_mle(lgf_t lgf, double[::1] x1, double[::1] x2, double[::1] y,
                      double[::1] lo_v, double[::1] hi_v, double[::1] theta0,
                      int p, int max_iter, double tol):
    cdef int n = y.shape[0]
    cdef double theta[3]
    cdef double tnew[3]
    cdef double lo[3]
    cdef double hi[3]
    cdef double g[3]
    cdef double gnew[3]
    cdef double step[3]
    cdef double H[9]
    cdef double Hnew[9]
    cdef double L, Lnew, n_scale, lam, move, tmax
    cdef int j, niter, ls
    cdef bint converged = False, accepted, moved

    for j in range(p):
        lo[j] = lo_v[j]
        hi[j] = hi_v[j]
        theta[j] = theta0[j]
        if theta[j] < lo[j]:
            theta[j] = lo[j]
        if theta[j] > hi[j]:
            theta[j] = hi[j]
    lgf(theta, x1, x2, y, n, &L, g, H)
    n_scale = 1.0 + fabs(L)
    niter = 0
    for niter in range(1, max_iter + 1):
        if proj_grad_max(g, theta, lo, hi, p, True) <= tol * n_scale:
            converged = True
            break
        if not solve_sym(H, g, step, p):
            for j in range(p):
                step[j] = g[j] / (1.0 + fabs(H[j * p + j]))
        lam = 1.0
        accepted = False
        for ls in range(60):
            move = 0.0
            tmax = 0.0
            for j in range(p):
                tnew[j] = theta[j] + lam * step[j]
                if tnew[j] < lo[j]:
                    tnew[j] = lo[j]
                if tnew[j] > hi[j]:
                    tnew[j] = hi[j]
                if fabs(tnew[j] - theta[j]) > move:
                    move = fabs(tnew[j] - theta[j])
                if fabs(theta[j]) > tmax:
                    tmax = fabs(theta[j])
            if move <= STEP_EPS * (1.0 + tmax):
                break
            lgf(tnew, x1, x2, y, n, &Lnew, gnew, Hnew)
            if isfinite(Lnew) and Lnew > L - 1e-14 * n_scale:
                for j in range(p):
                    theta[j] = tnew[j]
                    g[j] = gnew[j]
                for j in range(p * p):
                    H[j] = Hnew[j]
                L = Lnew
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            converged = proj_grad_max(g, theta, lo, hi, p, True) <= 1e3 * tol * n_scale
            break
    out = np.empty(p, dtype=np.float64)
    for j in range(p):
        out[j] = theta[j]
    return out, L, bool(converged), niter


def fit_logit_mle(x, y, lo, hi, theta0, int max_iter=200, double tol=1e-10):
    """Box-projected Fisher-scoring Newton for the two-parameter logit model."""
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] lov = np.ascontiguousarray(lo, dtype=np.float64)
    cdef double[::1] hiv = np.ascontiguousarray(hi, dtype=np.float64)
    cdef double[::1] t0 = np.ascontiguousarray(theta0, dtype=np.float64)
    return newton_mle(logit_lgf, xv, xv, yv, lov, hiv, t0, 2, max_iter, tol)


def fit_poisson2_mle(x1, x2, y, lo, hi, theta0, int max_iter=200, double tol=1e-10):
    """Box-projected Fisher-scoring Newton for the two-covariate Poisson model."""
    cdef double[::1] x1v = np.ascontiguousarray(x1, dtype=np.float64)
    cdef double[::1] x2v = np.ascontiguousarray(x2, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] lov = np.ascontiguousarray(lo, dtype=np.float64)
    cdef double[::1] hiv = np.ascontiguousarray(hi, dtype=np.float64)
    cdef double[::1] t0 = np.ascontiguousarray(theta0, dtype=np.float64)
    return newton_mle(poisson2_lgf, x1v, x2v, yv, lov, hiv, t0, 3, max_iter, tol)


ctypedef void (*rj_t)(double* theta, double[::1] x, double[::1] y, int n,
                      double* rss, double* Jtr, double* JtJ) nogil


cdef void mm_rj(double* theta, double[::1] x, double[::1] y, int n,
                double* rss, double* Jtr, double* JtJ) nogil:
    cdef double den, mu, r, j0, j1
    cdef int i
    rss[0] = 0.0
    Jtr[0] = 0.0
    Jtr[1] = 0.0
    JtJ[0] = 0.0
    JtJ[1] = 0.0
    JtJ[3] = 0.0
    for i in range(n):
        den = theta[1] + x[i]
        mu = theta[0] * x[i] / den
        r = y[i] - mu
        j0 = x[i] / den
        j1 = -theta[0] * x[i] / (den * den)
        rss[0] += r * r
        Jtr[0] += j0 * r
        Jtr[1] += j1 * r
        JtJ[0] += j0 * j0
        JtJ[1] += j0 * j1
        JtJ[3] += j1 * j1
    JtJ[2] = JtJ[1]


cdef void expdecay_rj(double* theta, double[::1] x, double[::1] y, int n,
                      double* rss, double* Jtr, double* JtJ) nogil:
    cdef double e, mu, r, j0, j1
    cdef int i
    rss[0] = 0.0
    Jtr[0] = 0.0
    Jtr[1] = 0.0
    JtJ[0] = 0.0
    JtJ[1] = 0.0
    JtJ[3] = 0.0
    for i in range(n):
        e = exp(-theta[1] * x[i])
        mu = theta[0] * e
        r = y[i] - mu
        j0 = e
        j1 = -theta[0] * x[i] * e
        rss[0] += r * r
        Jtr[0] += j0 * r
        Jtr[1] += j1 * r
        JtJ[0] += j0 * j0
        JtJ[1] += j0 * j1
        JtJ[3] += j1 * j1
    JtJ[2] = JtJ[1]


cdef tuple lm_lse(rj_t rj, double[::1] x, double[::1] y,
                  double[::1] lo_v, double[::1] hi_v, double[::1] theta0,
                  int max_iter, double tol):
    cdef int n = y.shape[0]
    cdef double theta[2]
    cdef double tnew[2]
    cdef double lo[2]
    cdef double hi[2]
    cdef double g[2]
    cdef double Jtr[2]
    cdef double JtJ[4]
    cdef double A[4]
    cdef double step[2]
    cdef double rss_t[1]
    cdef double rss, rss_new, scale, lam, move, tmax
    cdef double dummyJtr[2]
    cdef double dummyJtJ[4]
    cdef int j, niter, inner
    cdef bint converged = False, accepted, moved

    for j in range(2):
        lo[j] = lo_v[j]
        hi[j] = hi_v[j]
        theta[j] = theta0[j]
        if theta[j] < lo[j]:
            theta[j] = lo[j]
        if theta[j] > hi[j]:
            theta[j] = hi[j]
    rj(theta, x, y, n, rss_t, Jtr, JtJ)
    rss = rss_t[0]
    scale = 1.0 + rss
    lam = 1e-3
    niter = 0
    for niter in range(1, max_iter + 1):
        g[0] = -2.0 * Jtr[0]
        g[1] = -2.0 * Jtr[1]
        if proj_grad_max(g, theta, lo, hi, 2, False) <= tol * scale:
            converged = True
            break
        accepted = False
        for inner in range(50):
            A[0] = JtJ[0] + lam * (JtJ[0] + 1e-30)
            A[1] = JtJ[1]
            A[2] = JtJ[2]
            A[3] = JtJ[3] + lam * (JtJ[3] + 1e-30)
            if chol_solve(A, Jtr, step, 2):
                move = 0.0
                tmax = 0.0
                for j in range(2):
                    tnew[j] = theta[j] + step[j]
                    if tnew[j] < lo[j]:
                        tnew[j] = lo[j]
                    if tnew[j] > hi[j]:
                        tnew[j] = hi[j]
                    if fabs(tnew[j] - theta[j]) > move:
                        move = fabs(tnew[j] - theta[j])
                    if fabs(theta[j]) > tmax:
                        tmax = fabs(theta[j])
                moved = move > STEP_EPS * (1.0 + tmax)
                if moved:
                    rj(tnew, x, y, n, rss_t, dummyJtr, dummyJtJ)
                    rss_new = rss_t[0]
                    if isfinite(rss_new) and rss_new < rss + 1e-14 * scale:
                        theta[0] = tnew[0]
                        theta[1] = tnew[1]
                        rss = rss_new
                        Jtr[0] = dummyJtr[0]
                        Jtr[1] = dummyJtr[1]
                        for j in range(4):
                            JtJ[j] = dummyJtJ[j]
                        lam = lam * 0.3
                        if lam < 1e-12:
                            lam = 1e-12
                        accepted = True
                        break
            lam *= 2.0
            if lam > 1e12:
                break
        if not accepted:
            g[0] = -2.0 * Jtr[0]
            g[1] = -2.0 * Jtr[1]
            converged = proj_grad_max(g, theta, lo, hi, 2, False) <= 1e3 * tol * scale
            break
    out = np.empty(2, dtype=np.float64)
    out[0] = theta[0]
    out[1] = theta[1]
    return out, rss, bool(converged), niter


def fit_mm_lse(x, y, lo, hi, theta0, int max_iter=200, double tol=1e-10):
    """Box-projected Levenberg least squares for the saturating-rate model."""
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] lov = np.ascontiguousarray(lo, dtype=np.float64)
    cdef double[::1] hiv = np.ascontiguousarray(hi, dtype=np.float64)
    cdef double[::1] t0 = np.ascontiguousarray(theta0, dtype=np.float64)
    return lm_lse(mm_rj, xv, yv, lov, hiv, t0, max_iter, tol)


def fit_expdecay_lse(x, y, lo, hi, theta0, int max_iter=200, double tol=1e-10):
    """Box-projected Levenberg least squares for the exponential decay model."""
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] lov = np.ascontiguousarray(lo, dtype=np.float64)
    cdef double[::1] hiv = np.ascontiguousarray(hi, dtype=np.float64)
    cdef double[::1] t0 = np.ascontiguousarray(theta0, dtype=np.float64)
    return lm_lse(expdecay_rj, xv, yv, lov, hiv, t0, max_iter, tol)
