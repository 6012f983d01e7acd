"""Locally D-optimal saturated designs.

A saturated design puts uniform weight on exactly p support points, and the
optimal one maximizes the squared determinant of the p regressor columns
over the design region.  This module provides

* closed-form solvers for the builtin families (two-point formulas for the
  saturated-identifiability models, a transformed two-point problem for the
  binary GLMs, and the rescaled vertex solutions for the Poisson model),
* a multistart numeric solver (coarse grid scan plus Nelder-Mead polish)
  usable for any model and as an independent cross-check, and
* a Kiefer-Wolfowitz verification that a saturated optimum is optimal among
  all designs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .designs import Design, box_grid, kw_check
from .errors import NoInteriorRoot, NotAvailable
from .models import (
    ModelSpec,
    canonical_transform_binary,
    canonical_transform_poisson,
)

__all__ = [
    "TwoPointProblem",
    "TwoPointSolution",
    "SaturatedSolution",
    "NumericOptions",
    "KWVerdict",
    "two_point_problem",
    "solve_unbounded_two_point",
    "solve_two_point_bounded",
    "solve_saturated_closed_form",
    "solve_saturated_numeric",
    "verify_saturated_vs_kw",
    "best_saturated",
    "batch_objective",
    "max_abs_det_pairs",
    "max_abs_det_triples",
]

_CLOSED_FORM_MODELS = {
    "michaelis_menten",
    "exp_decay",
    "logit",
    "cloglog",
    "skewed_logit",
    "poisson2",
}


# --------------------------------------------------------------------------- #
# Objective
# --------------------------------------------------------------------------- #


def batch_objective(model: ModelSpec, theta, points) -> float:
    """Squared determinant of the p regressor columns at the given points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    F = model._f_theta(pts, np.asarray(theta, dtype=float))
    p = model.p
    if p == 1:
        det = F[0, 0]
    elif p == 2:
        det = F[0, 0] * F[1, 1] - F[0, 1] * F[1, 0]
    elif p == 3:
        det = float(np.dot(F[0], np.cross(F[1], F[2])))
    else:
        det = float(np.linalg.det(F))
    return float(det * det)


def _canonical_points(points: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return pts[np.lexsort(pts.T[::-1])]


# --------------------------------------------------------------------------- #
# Two-point problem for binary GLMs (transformed variable)
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class TwoPointProblem:
    """Maximize lnphi(z1) + lnphi(z2) + ln(z2 - z1) over alpha <= z1 < z2 <= beta."""

    alpha: float
    beta: float
    lnphi: Callable
    dlnphi: Callable

    def __post_init__(self):
        if not self.alpha < self.beta:
            raise ValueError("two-point problem requires alpha < beta")

    def h1(self, z1: float, z2: float) -> float:
        return float(self.dlnphi(z1)) - 1.0 / (z2 - z1)

    def h2(self, z1: float, z2: float) -> float:
        return float(self.dlnphi(z2)) + 1.0 / (z2 - z1)

    def value(self, z1: float, z2: float) -> float:
        return float(self.lnphi(z1)) + float(self.lnphi(z2)) + np.log(z2 - z1)


@dataclass(frozen=True)
class TwoPointSolution:
    z: tuple[float, float]
    case: int
    unbounded: tuple[float, float]


def two_point_problem(model: ModelSpec, theta) -> TwoPointProblem:
    """Build the transformed two-point problem for a binary GLM at theta."""
    if model.glm is None or model.glm.response_kind != "bernoulli":
        raise NotAvailable(f"model {model.name!r} is not a binary GLM")
    tr = canonical_transform_binary(model, theta)
    return TwoPointProblem(
        alpha=tr.alpha, beta=tr.beta, lnphi=model.glm.lnphi, dlnphi=model.glm.dlnphi
    )


def _lnphi_mode(dlnphi: Callable) -> float:
    # dlnphi is decreasing under strict log-concavity; bisect for its zero
    lo, hi = -40.0, 40.0
    if dlnphi(lo) <= 0:
        return lo
    if dlnphi(hi) >= 0:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if dlnphi(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)


_NEWTON_OFFSETS = [
    (1.0, 1.0), (0.5, 0.5), (2.0, 2.0), (0.25, 0.25), (4.0, 4.0),
    (1.0, 2.0), (2.0, 1.0), (0.5, 2.0), (2.0, 0.5), (8.0, 8.0),
    (1.0, 4.0), (4.0, 1.0), (0.25, 1.0), (1.0, 0.25), (16.0, 16.0),
]


def solve_unbounded_two_point(problem: TwoPointProblem) -> tuple[float, float]:
    """Stationary point of the unconstrained two-point objective.

    Damped Newton iteration on the 2x2 gradient system; the derivative of
    ``dlnphi`` is taken by central differences.  Raises
    :class:`NoInteriorRoot` if no root is found from 100 starting points,
    which signals a non-log-concave intensity.
    """
    dlnphi = problem.dlnphi
    mode = _lnphi_mode(dlnphi)

    def second(u: float) -> float:
        h = 1e-6 * (1.0 + abs(u))
        return (float(dlnphi(u + h)) - float(dlnphi(u - h))) / (2.0 * h)

    def residual(z1: float, z2: float) -> np.ndarray:
        inv = 1.0 / (z2 - z1)
        return np.array([float(dlnphi(z1)) - inv, float(dlnphi(z2)) + inv])

    starts = [(mode - s, mode + t) for s, t in _NEWTON_OFFSETS]
    k = 0
    while len(starts) < 100:
        k += 1
        starts.append((mode - 0.5 * k, mode + 0.5 * k + 0.25))
    for z1, z2 in starts[:100]:
        z = np.array([z1, z2], dtype=float)
        r = residual(*z)
        if not np.isfinite(r).all():
            continue
        for _ in range(120):
            if np.max(np.abs(r)) < 1e-10:
                return float(z[0]), float(z[1])
            gap = z[1] - z[0]
            inv2 = 1.0 / (gap * gap)
            J = np.array([[second(z[0]) - inv2, inv2], [inv2, second(z[1]) - inv2]])
            try:
                step = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError:
                break
            lam = 1.0
            accepted = False
            for _ in range(60):
                znew = z + lam * step
                if znew[1] - znew[0] > 1e-12:
                    rnew = residual(*znew)
                    if np.isfinite(rnew).all() and (
                        np.max(np.abs(rnew)) < np.max(np.abs(r)) or lam < 1e-6
                    ):
                        accepted = True
                        break
                lam *= 0.5
            if not accepted:
                break
            z, r = znew, rnew
    raise NoInteriorRoot("no stationary point found for the unbounded two-point problem")


def _bisect(fn: Callable, lo: float, hi: float, tol: float = 1e-12) -> float:
    flo = fn(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if (flo > 0) == (fm > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def solve_two_point_bounded(
    problem: TwoPointProblem, z_unbounded: tuple[float, float] | None = None
) -> TwoPointSolution:
    """Optimal bounded two-point support via the four-case reduction.

    The unconstrained optimum is clipped against [alpha, beta]: when one end
    of the interval is active the other point solves a one-dimensional
    stationarity condition, found by bisection to 1e-12.
    """
    a, b = problem.alpha, problem.beta
    zss = z_unbounded if z_unbounded is not None else solve_unbounded_two_point(problem)
    z1s, z2s = zss
    if a <= z1s and b >= z2s:
        return TwoPointSolution(z=(z1s, z2s), case=1, unbounded=zss)
    if a <= z1s:  # beta < z2s
        if problem.h1(a, b) <= 0:
            return TwoPointSolution(z=(a, b), case=2, unbounded=zss)
        u = _bisect(lambda t: problem.h1(t, b), a, b - 1e-12)
        return TwoPointSolution(z=(u, b), case=2, unbounded=zss)
    if b >= z2s:  # alpha > z1s
        if problem.h2(a, b) >= 0:
            return TwoPointSolution(z=(a, b), case=3, unbounded=zss)
        v = _bisect(lambda t: -problem.h2(a, t), a + 1e-12, b)
        return TwoPointSolution(z=(a, v), case=3, unbounded=zss)
    return TwoPointSolution(z=(a, b), case=4, unbounded=zss)


# cache of unconstrained optima per (link, shape parameter): they do not
# depend on theta, so the adaptive loop reuses them across steps
_UNBOUNDED_CACHE: dict[tuple[str, float], tuple[float, float]] = {}


def _unbounded_for_model(model: ModelSpec, problem: TwoPointProblem) -> tuple[float, float]:
    key = (model.glm.link_name, model.glm.link_param)
    if key not in _UNBOUNDED_CACHE:
        _UNBOUNDED_CACHE[key] = solve_unbounded_two_point(problem)
    return _UNBOUNDED_CACHE[key]


# --------------------------------------------------------------------------- #
# Saturated solutions
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class SaturatedSolution:
    """A p-point support maximizing the squared regressor determinant."""

    points: np.ndarray  # (p, d), lexicographically sorted
    objective: float
    method: str  # "closed_form" | "numeric"
    uniqueness: str  # "unique" | "non_unique" | "unknown"

    def design(self) -> Design:
        return Design.uniform(self.points)


def _make_solution(model, theta, points, method, uniqueness, require_positive=True) -> SaturatedSolution:
    pts = _canonical_points(points)
    obj = batch_objective(model, theta, pts)
    if require_positive and not obj > 0:
        raise NotAvailable(
            f"saturated support for {model.name!r} is singular at theta={np.asarray(theta)!r}"
        )
    return SaturatedSolution(points=pts, objective=obj, method=method, uniqueness=uniqueness)


def solve_saturated_closed_form(model: ModelSpec, theta) -> SaturatedSolution:
    """Closed-form locally D-optimal saturated design, where one is known.

    Raises :class:`NotAvailable` for models without a closed form (probit),
    and propagates :class:`NoInteriorRoot` from the two-point solver.
    """
    theta = np.asarray(theta, dtype=float)
    a = model.x_box.lower
    b = model.x_box.upper
    if model.name == "michaelis_menten":
        x1 = max(theta[1] * b[0] / (2.0 * theta[1] + b[0]), a[0])
        return _make_solution(model, theta, [[x1], [b[0]]], "closed_form", "unique")
    if model.name == "exp_decay":
        x2 = min(a[0] + 1.0 / theta[1], b[0])
        return _make_solution(model, theta, [[a[0]], [x2]], "closed_form", "unique")
    if model.name in ("logit", "cloglog", "skewed_logit"):
        tr = canonical_transform_binary(model, theta)
        problem = TwoPointProblem(
            alpha=tr.alpha, beta=tr.beta, lnphi=model.glm.lnphi, dlnphi=model.glm.dlnphi
        )
        sol = solve_two_point_bounded(problem, _unbounded_for_model(model, problem))
        xs = np.sort(tr.inverse(np.array(sol.z)))
        return _make_solution(model, theta, xs.reshape(2, 1), "closed_form", "unique")
    if model.name == "poisson2":
        tr = canonical_transform_poisson(theta, model.x_box)
        c1, c2 = tr.c
        if tr.case == "i":
            zpts = [(0.0, 0.0), (min(c1, 2.0), 0.0), (0.0, min(c2, 2.0))]
            uniqueness = "unique"
        elif tr.case == "ii":
            # free coordinate of the middle point fixed at 0 (canonical pick)
            zpts = [(0.0, 0.0), (min(c1, 2.0), 0.0), (0.0, c2)]
            uniqueness = "non_unique"
        else:
            zpts = [(0.0, 0.0), (c1, 0.0), (0.0, c2)]
            uniqueness = "non_unique"
        xs = tr.inverse(np.array(zpts))
        return _make_solution(model, theta, xs, "closed_form", uniqueness)
    raise NotAvailable(f"no closed-form saturated design for model {model.name!r}")


# --------------------------------------------------------------------------- #
# Numeric solver
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class NumericOptions:
    starts: int = 8
    grid_n: int = 21
    tol: float = 1e-6
    seed: int = 0
    polish_maxiter: int = 2000


def max_abs_det_pairs(V: np.ndarray) -> tuple[float, tuple[int, int]]:
    """Max |det[v_i, v_j]| over all pairs of rows of an (n, 2) array."""
    D = np.outer(V[:, 0], V[:, 1])
    D -= np.outer(V[:, 1], V[:, 0])
    np.abs(D, out=D)
    flat = int(np.argmax(D))
    i, j = divmod(flat, V.shape[0])
    return float(D[i, j]), (i, j)


def max_abs_det_triples(V: np.ndarray) -> tuple[float, tuple[int, int, int]]:
    """Max |det[v_i, v_j, v_k]| over all row triples of an (n, 3) array.

    Exhaustive over the full index cube, one matrix product per middle index;
    duplicate indices contribute zero determinants and cannot win.
    """
    n = V.shape[0]
    D = np.empty((n, n))
    best, best_idx = -np.inf, (0, 0, 0)
    for j in range(n):
        C = np.cross(V[j], V)
        np.matmul(V, C.T, out=D)
        np.abs(D, out=D)
        flat = int(np.argmax(D))
        i, k = divmod(flat, n)
        if D[i, k] > best:
            best, best_idx = float(D[i, k]), (i, j, k)
    return best, best_idx


def _grid_scan(model: ModelSpec, theta, grid_n: int):
    grid = box_grid(model.x_box, grid_n)
    F = model._f_theta(grid, theta)
    p = model.p
    if p == 1:
        i = int(np.argmax(np.abs(F[:, 0])))
        return grid[[i]], float(F[i, 0] ** 2)
    if p == 2:
        val, (i, j) = max_abs_det_pairs(F)
        return grid[[i, j]], float(val * val)
    if p == 3:
        val, idx = max_abs_det_triples(F)
        return grid[list(idx)], float(val * val)
    return None, 0.0


def solve_saturated_numeric(
    model: ModelSpec, theta, opts: NumericOptions | None = None
) -> SaturatedSolution:
    """Multistart maximization of the squared determinant over p-point sets.

    A coarse grid scan certifies a lower bound; Nelder-Mead then polishes the
    best grid point set and a number of randomized restarts, clipping iterates
    to the design box.  The best point set found is returned in canonical
    (sorted) order with uniqueness ``"unknown"``.
    """
    opts = opts or NumericOptions()
    if opts.starts < 1:
        raise ValueError("numeric solver needs at least one start")
    theta = np.asarray(theta, dtype=float)
    p, d = model.p, model.d
    lo = np.tile(model.x_box.lower, p)
    hi = np.tile(model.x_box.upper, p)

    grid_pts, grid_obj = _grid_scan(model, theta, opts.grid_n)

    def neg_obj(v: np.ndarray) -> float:
        pts = np.clip(v, lo, hi).reshape(p, d)
        return -batch_objective(model, theta, pts)

    rng = np.random.Generator(np.random.PCG64(opts.seed))
    starts: list[np.ndarray] = []
    if grid_pts is not None:
        starts.append(grid_pts.ravel())
    while len(starts) < opts.starts:
        starts.append(rng.uniform(lo, hi))

    best_pts = grid_pts if grid_pts is not None else starts[0].reshape(p, d)
    best_obj = grid_obj
    scale = max(grid_obj, 1e-300)
    for s in starts:
        res = minimize(
            neg_obj,
            s,
            method="Nelder-Mead",
            options={
                "xatol": 1e-10,
                "fatol": 1e-14 * scale,
                "maxiter": opts.polish_maxiter,
                "maxfev": opts.polish_maxiter,
            },
        )
        cand_pts = np.clip(res.x, lo, hi).reshape(p, d)
        cand_obj = -float(res.fun)
        better = cand_obj > best_obj * (1.0 + 1e-15)
        tie = abs(cand_obj - best_obj) <= 1e-12 * max(best_obj, 1.0)
        if better or (
            tie
            and _lex_less(_canonical_points(cand_pts), _canonical_points(best_pts))
        ):
            best_pts, best_obj = cand_pts, cand_obj
    assert best_obj >= grid_obj * (1.0 - opts.tol)
    # the numeric solver always reports its best point set; a zero objective
    # signals a degenerate model and is left to the caller to act on
    return _make_solution(model, theta, best_pts, "numeric", "unknown", require_positive=False)


def _lex_less(a: np.ndarray, b: np.ndarray) -> bool:
    for x, y in zip(a.ravel(), b.ravel()):
        if x != y:
            return x < y
    return False


# --------------------------------------------------------------------------- #
# Verification and dispatch
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class KWVerdict:
    sd_star_holds: bool
    max_sensitivity: float
    argmax: np.ndarray


def verify_saturated_vs_kw(
    model: ModelSpec, theta, solution: SaturatedSolution, grid_n: int = 2001, tol: float = 1e-3
) -> KWVerdict:
    """Check the uniform design on the solution support against the p bound."""
    check = kw_check(solution.design(), theta, model, grid_n=grid_n, tol=tol)
    return KWVerdict(
        sd_star_holds=check.is_d_optimal,
        max_sensitivity=check.max_sensitivity,
        argmax=check.argmax,
    )


def best_saturated(
    model: ModelSpec,
    theta,
    solver: str = "closed_form_preferred",
    numeric_opts: NumericOptions | None = None,
) -> SaturatedSolution:
    """Dispatch to the closed form when available, else the numeric solver."""
    if solver not in ("closed_form_preferred", "numeric"):
        raise ValueError(f"unknown solver choice {solver!r}")
    if solver == "closed_form_preferred" and model.name in _CLOSED_FORM_MODELS:
        try:
            return solve_saturated_closed_form(model, theta)
        except (NotAvailable, NoInteriorRoot):
            pass
    return solve_saturated_numeric(model, theta, numeric_opts)
