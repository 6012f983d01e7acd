"""Response sampling and box-constrained least-squares / maximum-likelihood fits.

Estimates are always constrained to the compact parameter box: boundary
estimates are legal outputs (expected in early adaptive steps, e.g. under
separation in binary data) and are flagged via ``on_boundary``.

Randomness is counter-based: a :class:`SampleStream` derives an independent
generator for every (path, observation-index) pair, so simulated paths are
reproducible and independent of scheduling order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from . import _kernels as kernels
from ._kernels import _pyref
from .errors import MissingGLMBlock
from .models import ModelSpec, as_points

__all__ = [
    "Dataset",
    "ErrorModel",
    "Estimate",
    "FitOptions",
    "SampleStream",
    "sample_response",
    "lse_fit",
    "mle_fit",
    "rss",
    "log_likelihood",
    "log_likelihood_grad",
]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class Dataset:
    """Realized design points and responses, in observation order."""

    xs: np.ndarray  # (n, d)
    ys: np.ndarray  # (n,)

    def __init__(self, xs, ys, d: int | None = None):
        xs = as_points(xs, d if d is not None else np.atleast_2d(np.asarray(xs)).shape[-1])
        ys = np.asarray(ys, dtype=float)
        if ys.ndim != 1 or ys.size != xs.shape[0]:
            raise ValueError("xs and ys must have matching lengths")
        if ys.size < 1:
            raise ValueError("dataset needs at least one observation")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self) -> int:
        return self.ys.size


@dataclass(frozen=True)
class ErrorModel:
    """Response distribution: additive gaussian noise or the model's own family."""

    kind: str  # "gaussian" | "exponential_family"
    sigma: float = 0.0

    @classmethod
    def gaussian(cls, sigma: float) -> "ErrorModel":
        if not sigma > 0:
            raise ValueError("gaussian error model requires sigma > 0")
        return cls(kind="gaussian", sigma=float(sigma))

    @classmethod
    def exponential_family(cls) -> "ErrorModel":
        return cls(kind="exponential_family")


@dataclass(frozen=True)
class SampleStream:
    """Counter-based random stream keyed by (seed, path); split per observation."""

    seed: int
    path_index: int = 0

    def rng(self, obs_index: int) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.path_index & _MASK64], dtype=np.uint64)
        counter = np.array([0, 0, obs_index & _MASK64, 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=counter, key=key))


def sample_response(
    model: ModelSpec, x, theta_true, err: ErrorModel, rng: np.random.Generator
) -> float:
    """Draw one response at x under the true parameter."""
    if err.kind == "gaussian":
        return float(model.mu(x, theta_true) + err.sigma * rng.standard_normal())
    if model.glm is None:
        raise MissingGLMBlock("exponential-family sampling requires a GLM model")
    mean = float(model.mu(x, theta_true))
    if model.glm.response_kind == "bernoulli":
        return float(rng.random() < mean)
    return float(rng.poisson(mean))


@dataclass(frozen=True)
class Estimate:
    theta_hat: np.ndarray
    objective: float  # residual sum of squares (lse) or log-likelihood (mle)
    converged: bool
    on_boundary: bool
    n_iter: int
    method: str
    n_obs: int


@dataclass(frozen=True)
class FitOptions:
    starts: int | None = None  # None: 16 for lse, 8 for mle
    max_iter: int = 200
    tol: float = 1e-10
    seed: int = 0
    warm_start: np.ndarray | None = None


def _lhs_starts(box, count: int, seed: int) -> np.ndarray:
    """Deterministic midpoint Latin-hypercube starts inside the box."""
    if count <= 0:
        return np.empty((0, box.dim))
    rng = np.random.Generator(np.random.PCG64(seed))
    cols = [rng.permutation(count) for _ in range(box.dim)]
    unit = (np.stack(cols, axis=1) + 0.5) / count
    return box.lower + unit * (box.upper - box.lower)


def _start_points(model: ModelSpec, opts: FitOptions, default_starts: int) -> list[np.ndarray]:
    n_starts = opts.starts if opts.starts is not None else default_starts
    starts: list[np.ndarray] = []
    if opts.warm_start is not None:
        starts.append(model.theta_box.clip(opts.warm_start))
    if len(starts) < n_starts:
        starts.append(model.theta_box.center)
    extra = n_starts - len(starts)
    if extra > 0:
        starts.extend(_lhs_starts(model.theta_box, extra, opts.seed))
    return starts[:n_starts]


def _on_boundary(theta: np.ndarray, box) -> bool:
    eps_lo = 1e-10 * (1.0 + np.abs(box.lower))
    eps_hi = 1e-10 * (1.0 + np.abs(box.upper))
    return bool(np.any(theta <= box.lower + eps_lo) or np.any(theta >= box.upper - eps_hi))


# --------------------------------------------------------------------------- #
# Objectives (also used directly by tests)
# --------------------------------------------------------------------------- #


def rss(data: Dataset, model: ModelSpec, theta) -> float:
    """Sum of squared residuals."""
    r = data.ys - model._mu(data.xs, np.asarray(theta, dtype=float))
    return float(r @ r)


def _glm_parts(data: Dataset, model: ModelSpec):
    if model.glm is None:
        raise MissingGLMBlock(f"model {model.name!r} carries no exponential-family block")
    return model._f_base(data.xs), data.ys, model.glm


def log_likelihood(data: Dataset, model: ModelSpec, theta) -> float:
    """Joint log-likelihood up to the additive term free of theta."""
    F, y, glm = _glm_parts(data, model)
    tau = glm.tau(F @ np.asarray(theta, dtype=float))
    return float(y @ tau - np.sum(glm.b(tau)))


def log_likelihood_grad(data: Dataset, model: ModelSpec, theta) -> np.ndarray:
    """Analytic gradient of the log-likelihood."""
    F, y, glm = _glm_parts(data, model)
    u = F @ np.asarray(theta, dtype=float)
    return F.T @ ((y - glm.G(u)) * glm.grad_weight(u))


# --------------------------------------------------------------------------- #
# Least squares
# --------------------------------------------------------------------------- #

_LSE_KERNELS = {
    "michaelis_menten": "fit_mm_lse",
    "exp_decay": "fit_expdecay_lse",
}


def lse_fit(data: Dataset, model: ModelSpec, opts: FitOptions | None = None) -> Estimate:
    """Least-squares estimate over the parameter box.

    Multistart damped Gauss-Newton (Levenberg-scaled, projected onto the
    box); a Nelder-Mead rescue runs when the derivative-based solve stalls.
    Deterministic for fixed ``(data, opts)``.
    """
    opts = opts or FitOptions()
    box = model.theta_box
    lo, hi = box.lower, box.upper
    kernel_name = _LSE_KERNELS.get(model.name)
    if kernel_name is not None:
        kern = getattr(kernels, kernel_name)
        x = data.xs[:, 0]

        def solve(t0):
            return kern(x, data.ys, lo, hi, t0, opts.max_iter, opts.tol)

    else:
        mu_fn, grad_fn = model._mu, model._mu_grad

        def resid_jac(theta):
            return data.ys - mu_fn(data.xs, theta), grad_fn(data.xs, theta)

        def solve(t0):
            return _pyref._lm_lse(resid_jac, t0, lo, hi, opts.max_iter, opts.tol)

    best = None
    for t0 in _start_points(model, opts, default_starts=16):
        theta, obj, converged, niter = solve(t0)
        if not converged:
            res = minimize(
                lambda t: rss(data, model, box.clip(t)),
                theta,
                method="Nelder-Mead",
                bounds=list(zip(lo, hi)),
                options={"xatol": 1e-12, "fatol": 1e-14 * (1.0 + obj), "maxiter": 400},
            )
            if float(res.fun) < obj:
                theta, obj = box.clip(res.x), float(res.fun)
                converged = bool(res.success)
        if best is None or obj < best[1] - 1e-15 * (1.0 + abs(best[1])):
            best = (np.asarray(theta, dtype=float), float(obj), converged, niter)
    theta, obj, converged, niter = best
    return Estimate(
        theta_hat=theta,
        objective=obj,
        converged=converged,
        on_boundary=_on_boundary(theta, box),
        n_iter=niter,
        method="lse",
        n_obs=data.n,
    )


# --------------------------------------------------------------------------- #
# Maximum likelihood
# --------------------------------------------------------------------------- #


def mle_fit(data: Dataset, model: ModelSpec, opts: FitOptions | None = None) -> Estimate:
    """Maximum-likelihood estimate over the parameter box.

    Projected Newton with the analytic score and Fisher-scoring curvature.
    Complete separation in binary data simply drives the estimate to the box
    boundary (``on_boundary=True``).  Deterministic for fixed ``(data, opts)``.
    """
    opts = opts or FitOptions()
    if model.glm is None:
        raise MissingGLMBlock(f"model {model.name!r} carries no exponential-family block")
    box = model.theta_box
    lo, hi = box.lower, box.upper

    if model.name == "logit":
        x = data.xs[:, 0]

        def solve(t0):
            return kernels.fit_logit_mle(x, data.ys, lo, hi, t0, opts.max_iter, opts.tol)

    elif model.name == "poisson2":
        x1, x2 = data.xs[:, 0], data.xs[:, 1]

        def solve(t0):
            return kernels.fit_poisson2_mle(
                x1, x2, data.ys, lo, hi, t0, opts.max_iter, opts.tol
            )

    else:
        F, y, glm = _glm_parts(data, model)

        def lgf(theta):
            u = F @ theta
            tau = glm.tau(u)
            L = float(y @ tau - np.sum(glm.b(tau)))
            g = F.T @ ((y - glm.G(u)) * glm.grad_weight(u))
            w = glm.phi(u) ** 2
            H = (F * w[:, None]).T @ F
            return L, g, H

        def solve(t0):
            return _pyref._newton_mle(lgf, t0, lo, hi, opts.max_iter, opts.tol)

    best = None
    for t0 in _start_points(model, opts, default_starts=8):
        theta, obj, converged, niter = solve(t0)
        if best is None or obj > best[1] + 1e-15 * (1.0 + abs(best[1])):
            best = (np.asarray(theta, dtype=float), float(obj), converged, niter)
    theta, obj, converged, niter = best
    return Estimate(
        theta_hat=theta,
        objective=obj,
        converged=converged,
        on_boundary=_on_boundary(theta, box),
        n_iter=niter,
        method="mle",
        n_obs=data.n,
    )
