"""Design and information-matrix algebra.

A design is a finitely supported probability measure on the experimental
region.  This module computes information matrices, log-determinants,
D-efficiencies, and the Kiefer-Wolfowitz sensitivity function used both by
the equivalence-theorem check and by the one-point-per-step comparator
algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import DimensionMismatch, InvalidReference, SingularInformation
from .models import ModelSpec, as_points

__all__ = [
    "Design",
    "KWCheck",
    "information_matrix",
    "log_det",
    "d_efficiency",
    "kw_sensitivity",
    "kw_check",
    "box_grid",
]

_MERGE_TOL = 1e-12
_WEIGHT_TOL = 1e-12
_SINGULAR_EIG = 1e-10
_LOG_DET_FLOOR = np.log(1e-300)


class Design:
    """Finitely supported design: distinct points with positive weights summing to 1.

    Duplicate support points (coordinatewise within 1e-12) are merged at
    construction by summing their weights, and the support is kept in
    lexicographic order so equal designs compare equal.
    """

    __slots__ = ("points", "weights")

    def __init__(self, points, weights):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.ndim != 2:
            raise DimensionMismatch("design points must form a 2-d array")
        w = np.asarray(weights, dtype=float)
        if w.shape != (pts.shape[0],):
            raise ValueError("one weight per support point required")
        if np.any(w <= 0):
            raise ValueError("design weights must be strictly positive")
        if abs(w.sum() - 1.0) > max(_WEIGHT_TOL, 1e-12 * w.size):
            raise ValueError(f"design weights sum to {w.sum()!r}, expected 1")
        pts, w = _merge_support(pts, w)
        self.points = pts
        self.weights = w / w.sum()
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @classmethod
    def uniform(cls, points) -> "Design":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @classmethod
    def from_observations(cls, points) -> "Design":
        """Empirical measure of a realized point sequence (repeats allowed)."""
        return cls.uniform(points)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def mix(self, other: "Design", alpha: float) -> "Design":
        """Mixture alpha*self + (1-alpha)*other as measures."""
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("mixture coefficient must lie in [0, 1]")
        if alpha == 0.0:
            return other
        if alpha == 1.0:
            return self
        pts = np.vstack([self.points, other.points])
        w = np.concatenate([alpha * self.weights, (1.0 - alpha) * other.weights])
        return Design(pts, w)

    def __eq__(self, other):
        return (
            isinstance(other, Design)
            and self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    def __repr__(self):
        rows = ", ".join(
            f"{tuple(np.round(p, 6))}:{w:.6g}" for p, w in zip(self.points, self.weights)
        )
        return f"Design({rows})"


def _merge_support(pts: np.ndarray, w: np.ndarray):
    order = np.lexsort(pts.T[::-1])
    pts, w = pts[order], w[order]
    keep_pts, keep_w = [pts[0]], [w[0]]
    for row, wi in zip(pts[1:], w[1:]):
        if np.all(np.abs(row - keep_pts[-1]) <= _MERGE_TOL):
            keep_w[-1] = keep_w[-1] + wi
        else:
            keep_pts.append(row)
            keep_w.append(wi)
    return np.array(keep_pts, dtype=float), np.array(keep_w, dtype=float)


# --------------------------------------------------------------------------- #
# Information matrices
# --------------------------------------------------------------------------- #


def information_matrix(design: Design, theta, model: ModelSpec) -> np.ndarray:
    """Weighted sum of elemental matrices f f^T over the design support."""
    if design.d != model.d:
        raise DimensionMismatch(
            f"design has dimension {design.d}, model expects {model.d}"
        )
    F = model._f_theta(design.points, np.asarray(theta, dtype=float))
    M = (design.weights[:, None] * F).T @ F
    return 0.5 * (M + M.T)


def log_det(M: np.ndarray) -> float:
    """Log-determinant via Cholesky; ``-inf`` for (numerically) singular input."""
    M = 0.5 * (np.asarray(M, dtype=float) + np.asarray(M, dtype=float).T)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        sign, ld = np.linalg.slogdet(M)
        return float(ld) if sign > 0 and ld > _LOG_DET_FLOOR else -np.inf
    ld = 2.0 * float(np.sum(np.log(np.diag(L))))
    return ld if ld > _LOG_DET_FLOOR else -np.inf


def d_efficiency(design: Design, theta_true, model: ModelSpec, m_star_det: float) -> float:
    """D-efficiency {det M(design) / m_star_det}^(1/p) at the true parameter.

    The reference ``m_star_det`` is the determinant of the locally D-optimal
    information matrix.  The 1/p exponent reduces to the square root in the
    two-parameter models, and is the standard convention for general p.
    """
    if not m_star_det > 0:
        raise InvalidReference("reference determinant must be positive")
    ld = log_det(information_matrix(design, theta_true, model))
    if ld == -np.inf:
        return 0.0
    return float(np.exp((ld - np.log(m_star_det)) / model.p))


def _info_solver(design: Design, theta, model: ModelSpec):
    M = information_matrix(design, theta, model)
    eigs = np.linalg.eigvalsh(M)
    if eigs[0] <= _SINGULAR_EIG:
        raise SingularInformation(
            f"information matrix numerically singular (min eigenvalue {eigs[0]:.3e})"
        )
    return M


def kw_sensitivity(design: Design, theta, model: ModelSpec, x) -> float | np.ndarray:
    """Sensitivity d(x) = f(x)^T M^{-1} f(x); vectorized over points."""
    M = _info_solver(design, theta, model)
    pts = as_points(x, model.d)
    F = model._f_theta(pts, np.asarray(theta, dtype=float))
    vals = np.einsum("ij,ij->i", F, np.linalg.solve(M, F.T).T)
    return float(vals[0]) if np.ndim(x) <= 1 and pts.shape[0] == 1 else vals


@dataclass(frozen=True)
class KWCheck:
    max_sensitivity: float
    argmax: np.ndarray
    is_d_optimal: bool
    grid_max: float


def box_grid(box, n: int) -> np.ndarray:
    """Uniform grid with n points per axis over a box, flattened to (n^d, d)."""
    axes = [np.linspace(box.lower[j], box.upper[j], n) for j in range(box.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def kw_check(
    design: Design, theta, model: ModelSpec, grid_n: int = 2001, tol: float = 1e-3
) -> KWCheck:
    """Equivalence-theorem check: is max_x d(x) <= p (within tol)?

    Scans a uniform grid (grid_n points per axis), then polishes the best
    grid point with a bounded Nelder-Mead local maximization.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    M = _info_solver(design, theta, model)
    theta = np.asarray(theta, dtype=float)
    Minv = np.linalg.inv(M)

    def d_many(pts):
        F = model._f_theta(pts, theta)
        return np.einsum("ij,jk,ik->i", F, Minv, F)

    grid = box_grid(model.x_box, grid_n)
    best_val, best_pt = -np.inf, None
    for start in range(0, grid.shape[0], 500_000):
        chunk = grid[start : start + 500_000]
        vals = d_many(chunk)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best_pt = float(vals[i]), chunk[i]
    grid_max = best_val

    lo, hi = model.x_box.lower, model.x_box.upper
    res = minimize(
        lambda z: -d_many(np.clip(z, lo, hi).reshape(1, -1))[0],
        best_pt,
        method="Nelder-Mead",
        bounds=list(zip(lo, hi)),
        options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 500},
    )
    if -res.fun > best_val:
        best_val, best_pt = -float(res.fun), np.clip(res.x, lo, hi)
    return KWCheck(
        max_sensitivity=best_val,
        argmax=np.asarray(best_pt, dtype=float),
        is_d_optimal=bool(best_val <= model.p + tol),
        grid_max=grid_max,
    )
