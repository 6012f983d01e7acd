"""Model registry: nonlinear regression and GLM families with design algebra hooks.

Each model is described by a :class:`ModelSpec` carrying the mean response
``mu(x, theta)``, the elemental regressor ``f_theta(x)`` whose outer product
is the elemental information matrix, compact boxes for the parameter and
design spaces, and (for GLM-type models) an exponential-family block used by
response sampling and maximum-likelihood estimation.

Builtin families
----------------
``michaelis_menten``   mu = t1*x/(t2+x), regressor = gradient of mu
``exp_decay``          mu = t1*exp(-t2*x), regressor = gradient of mu
``logit``, ``cloglog``, ``probit``, ``skewed_logit``
                       binary-response models, mu = G(t1 + t2*x),
                       regressor = phi(t1 + t2*x) * (1, x)
``poisson2``           log-linear Poisson with two covariates,
                       regressor = exp(u/2) * (1, x1, x2)

Link internals are computed in log space so that ``phi`` and the likelihood
weights stay finite over the whole reachable range of the linear predictor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit, log_ndtr

from .errors import BoxViolation, DegenerateSlope, UnknownModel

__all__ = [
    "ParamBox",
    "DesignBox",
    "GLMBlock",
    "ModelSpec",
    "builtin",
    "BUILTIN_NAMES",
    "verify_gradient",
    "canonical_transform_binary",
    "canonical_transform_poisson",
    "BinaryCanonical",
    "PoissonCanonical",
]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _softplus(u):
    return np.logaddexp(0.0, u)


# --------------------------------------------------------------------------- #
# Boxes
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class ParamBox:
    """Compact parameter box, the Cartesian product of [lower_j, upper_j]."""

    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise BoxViolation("box bounds must be 1-d arrays of equal length")
        if not np.all(lower < upper):
            raise BoxViolation("box requires lower < upper componentwise")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, theta, margin: float = 0.0) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(
            np.all(theta >= self.lower + margin) and np.all(theta <= self.upper - margin)
        )

    def clip(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)

    def corners(self) -> np.ndarray:
        k = self.dim
        grid = np.stack(
            np.meshgrid(*[(self.lower[j], self.upper[j]) for j in range(k)], indexing="ij"),
            axis=-1,
        )
        return grid.reshape(-1, k)


class DesignBox(ParamBox):
    """Compact experimental region, a box in 1 or 2 dimensions for builtins."""


# --------------------------------------------------------------------------- #
# Link internals (binary response) and exponential-family blocks
# --------------------------------------------------------------------------- #


class _Link:
    """Stable log-space primitives for one inverse-link G.

    Subclasses provide ``log_g`` (log G), ``log_1mg`` (log(1-G)),
    ``log_gp`` (log G') and ``d2_ratio`` (G''/G'); everything else is derived.
    """

    name = ""

    def log_g(self, u):
        raise NotImplementedError

    def log_1mg(self, u):
        raise NotImplementedError

    def log_gp(self, u):
        raise NotImplementedError

    def d2_ratio(self, u):
        raise NotImplementedError

    # derived quantities -------------------------------------------------- #

    def g(self, u):
        return np.exp(self.log_g(u))

    def gp(self, u):
        return np.exp(self.log_gp(u))

    def gsecond(self, u):
        return self.d2_ratio(u) * self.gp(u)

    def phi(self, u):
        # G' / sqrt(G (1-G)) for Bernoulli variance
        return np.exp(self.log_gp(u) - 0.5 * (self.log_g(u) + self.log_1mg(u)))

    def grad_weight(self, u):
        # G' / Var = G' / (G (1-G)); weight of the score contributions
        return np.exp(self.log_gp(u) - self.log_g(u) - self.log_1mg(u))

    def tau(self, u):
        # canonical (log-odds) parameter of the Bernoulli mean G(u)
        return self.log_g(u) - self.log_1mg(u)

    def lnphi(self, u):
        return self.log_gp(u) - 0.5 * (self.log_g(u) + self.log_1mg(u))

    def dlnphi(self, u):
        return self.d2_ratio(u) - 0.5 * (
            np.exp(self.log_gp(u) - self.log_g(u)) - np.exp(self.log_gp(u) - self.log_1mg(u))
        )


class _LogitLink(_Link):
    name = "logit"

    def log_g(self, u):
        return -_softplus(-np.asarray(u, dtype=float))

    def log_1mg(self, u):
        return -_softplus(np.asarray(u, dtype=float))

    def log_gp(self, u):
        return self.log_g(u) + self.log_1mg(u)

    def d2_ratio(self, u):
        return 1.0 - 2.0 * expit(u)

    def dlnphi(self, u):
        return 0.5 - expit(u)

    def tau(self, u):
        return np.asarray(u, dtype=float)


class _CloglogLink(_Link):
    name = "cloglog"

    def log_g(self, u):
        t = np.exp(np.asarray(u, dtype=float))
        with np.errstate(divide="ignore"):
            return np.log(-np.expm1(-t))

    def log_1mg(self, u):
        return -np.exp(np.asarray(u, dtype=float))

    def log_gp(self, u):
        u = np.asarray(u, dtype=float)
        return u - np.exp(u)

    def d2_ratio(self, u):
        return 1.0 - np.exp(np.asarray(u, dtype=float))


class _ProbitLink(_Link):
    name = "probit"

    def log_g(self, u):
        return log_ndtr(np.asarray(u, dtype=float))

    def log_1mg(self, u):
        return log_ndtr(-np.asarray(u, dtype=float))

    def log_gp(self, u):
        u = np.asarray(u, dtype=float)
        return -0.5 * u * u - _LOG_SQRT_2PI

    def d2_ratio(self, u):
        return -np.asarray(u, dtype=float)


class _SkewedLogitLink(_Link):
    name = "skewed_logit"

    def __init__(self, m: float):
        if not m > 0:
            raise BoxViolation("skewed_logit requires exponent m > 0")
        self.m = float(m)

    def log_g(self, u):
        return -self.m * _softplus(-np.asarray(u, dtype=float))

    def log_1mg(self, u):
        with np.errstate(divide="ignore"):
            return np.log(-np.expm1(self.log_g(u)))

    def log_gp(self, u):
        u = np.asarray(u, dtype=float)
        return np.log(self.m) - u - (self.m + 1.0) * _softplus(-u)

    def d2_ratio(self, u):
        s = expit(u)
        return self.m * (1.0 - s) - s


_BINARY_LINKS: dict[str, Callable[..., _Link]] = {
    "logit": lambda **kw: _LogitLink(),
    "cloglog": lambda **kw: _CloglogLink(),
    "probit": lambda **kw: _ProbitLink(),
    "skewed_logit": lambda m=2.0, **kw: _SkewedLogitLink(m),
}


@dataclass(frozen=True)
class GLMBlock:
    """Exponential-family machinery for a GLM-type model.

    ``phi(u)`` is the square-root information weight G'/sqrt(b''(tau(u))) and
    ``grad_weight(u) = G'(u)/b''(tau(u))`` is the score weight used by the
    maximum-likelihood gradient.  ``tau(u)`` maps the linear predictor to the
    canonical parameter of the response family; for canonical links it is the
    identity.
    """

    response_kind: str  # "bernoulli" | "poisson"
    G: Callable
    Gprime: Callable
    Gsecond: Callable
    b: Callable
    bprime: Callable
    bprime_inv: Callable
    bsecond: Callable
    phi: Callable
    grad_weight: Callable
    tau: Callable
    lnphi: Callable
    dlnphi: Callable
    u_range: tuple[float, float]
    canonical: bool
    link_name: str
    link_param: float = 0.0


def _bernoulli_block(link: _Link, u_range: tuple[float, float]) -> GLMBlock:
    return GLMBlock(
        response_kind="bernoulli",
        G=link.g,
        Gprime=link.gp,
        Gsecond=link.gsecond,
        b=_softplus,
        bprime=expit,
        bprime_inv=lambda mval: np.log(mval) - np.log1p(-np.asarray(mval, dtype=float)),
        bsecond=lambda t: expit(t) * expit(-np.asarray(t, dtype=float)),
        phi=link.phi,
        grad_weight=link.grad_weight,
        tau=link.tau,
        lnphi=link.lnphi,
        dlnphi=link.dlnphi,
        u_range=u_range,
        canonical=(link.name == "logit"),
        link_name=link.name,
        link_param=getattr(link, "m", 0.0),
    )


def _poisson_block(u_range: tuple[float, float]) -> GLMBlock:
    ident = lambda u: np.asarray(u, dtype=float)
    return GLMBlock(
        response_kind="poisson",
        G=np.exp,
        Gprime=np.exp,
        Gsecond=np.exp,
        b=np.exp,
        bprime=np.exp,
        bprime_inv=np.log,
        bsecond=np.exp,
        phi=lambda u: np.exp(0.5 * np.asarray(u, dtype=float)),
        grad_weight=lambda u: np.ones_like(np.asarray(u, dtype=float)),
        tau=ident,
        lnphi=lambda u: 0.5 * np.asarray(u, dtype=float),
        dlnphi=lambda u: np.full_like(np.asarray(u, dtype=float), 0.5),
        u_range=u_range,
        canonical=True,
        link_name="log",
    )


# --------------------------------------------------------------------------- #
# Model specification
# --------------------------------------------------------------------------- #


def as_points(x, d: int) -> np.ndarray:
    """Coerce scalar / (n,) / (n,d) input to a float array of shape (n, d)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if d == 1 else arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != d:
        from .errors import DimensionMismatch

        raise DimensionMismatch(f"points have dimension {arr.shape[-1]}, model expects {d}")
    return arr


@dataclass(frozen=True)
class ModelSpec:
    """A nonlinear regression model with its design-algebra ingredients.

    The callables are vectorized over points: they accept an (n, d) array and
    return (n,) for ``mu`` and (n, p) for the regressor and gradient.
    """

    name: str
    p: int
    d: int
    theta_box: ParamBox
    x_box: DesignBox
    flags: frozenset
    _mu: Callable
    _f_theta: Callable
    _mu_grad: Callable
    glm: GLMBlock | None = None
    _f_base: Callable | None = None
    options: dict = field(default_factory=dict)

    def mu(self, x, theta) -> np.ndarray | float:
        pts = as_points(x, self.d)
        out = self._mu(pts, np.asarray(theta, dtype=float))
        return float(out[0]) if np.ndim(x) <= 1 and pts.shape[0] == 1 else out

    def f_theta(self, x, theta) -> np.ndarray:
        pts = as_points(x, self.d)
        out = self._f_theta(pts, np.asarray(theta, dtype=float))
        return out[0] if np.ndim(x) <= 1 and pts.shape[0] == 1 else out

    def mu_grad(self, x, theta) -> np.ndarray:
        pts = as_points(x, self.d)
        out = self._mu_grad(pts, np.asarray(theta, dtype=float))
        return out[0] if np.ndim(x) <= 1 and pts.shape[0] == 1 else out

    def f_base(self, x) -> np.ndarray:
        if self._f_base is None:
            from .errors import MissingGLMBlock

            raise MissingGLMBlock(f"model {self.name!r} has no GLM factorization")
        pts = as_points(x, self.d)
        out = self._f_base(pts)
        return out[0] if np.ndim(x) <= 1 and pts.shape[0] == 1 else out

    def linear_predictor(self, x, theta) -> np.ndarray:
        base = self.f_base(x)
        return np.atleast_2d(base) @ np.asarray(theta, dtype=float) if base.ndim == 2 else float(
            base @ np.asarray(theta, dtype=float)
        )

    def psi(self, x, theta):
        """GLM intensity factor: f_theta = psi * f_base."""
        if self.glm is None:
            from .errors import MissingGLMBlock

            raise MissingGLMBlock(f"model {self.name!r} has no GLM factorization")
        return self.glm.phi(self.linear_predictor(x, theta))

    @property
    def is_si(self) -> bool:
        return "SI" in self.flags

    @property
    def is_glm(self) -> bool:
        return "GLM" in self.flags


# --------------------------------------------------------------------------- #
# Builtin factories
# --------------------------------------------------------------------------- #

BUILTIN_NAMES = (
    "michaelis_menten",
    "exp_decay",
    "logit",
    "cloglog",
    "probit",
    "skewed_logit",
    "poisson2",
)

_DEFAULT_BOXES = {
    "michaelis_menten": (([0.1, 0.1], [10.0, 10.0]), ([0.0], [10.0])),
    "exp_decay": (([0.1, 0.1], [10.0, 10.0]), ([0.0], [10.0])),
    "logit": (([-10.0, 0.1], [10.0, 10.0]), ([-4.0], [4.0])),
    "cloglog": (([-10.0, 0.1], [10.0, 10.0]), ([-4.0], [4.0])),
    "probit": (([-10.0, 0.1], [10.0, 10.0]), ([-4.0], [4.0])),
    "skewed_logit": (([-10.0, 0.1], [10.0, 10.0]), ([-4.0], [4.0])),
    "poisson2": (([-5.0, -5.0, -5.0], [5.0, 0.0, 0.0]), ([0.0, 0.0], [3.0, 3.0])),
}


def _coerce_box(box, cls, default):
    if box is None:
        return cls(*default)
    if isinstance(box, ParamBox):
        return box
    lower, upper = box
    return cls(lower, upper)


def _linear_u_range(theta_box: ParamBox, x_box: DesignBox, f_base) -> tuple[float, float]:
    # the predictor is bilinear in (theta, x): extremes occur at box corners
    us = [
        float(f_base(xc.reshape(1, -1))[0] @ tc)
        for tc in theta_box.corners()
        for xc in x_box.corners()
    ]
    return min(us), max(us)


def _preflight_glm(block: GLMBlock) -> None:
    # condition GLM*: G and G' must stay finite over the reachable predictor
    # range (G' may underflow to zero in the far tails, which only zeroes the
    # corresponding information weight)
    lo, hi = block.u_range
    pad = 1e-9 * (1.0 + abs(hi - lo))
    u = np.linspace(lo - pad, hi + pad, 21)
    g, gp = block.G(u), block.Gprime(u)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(gp)) and np.all(gp >= 0)):
        raise BoxViolation("inverse link G or G' not finite on the reachable range")


def builtin(name: str, theta_box=None, x_box=None, **options) -> ModelSpec:
    """Construct a builtin :class:`ModelSpec` by name.

    ``theta_box``/``x_box`` accept ``(lower, upper)`` pairs or box objects;
    model-family defaults are used when omitted.  ``skewed_logit`` takes the
    exponent ``m`` (default 2.0) as a keyword option.
    """
    if name not in BUILTIN_NAMES:
        raise UnknownModel(f"unknown builtin model {name!r}")
    tb_default, xb_default = _DEFAULT_BOXES[name]
    theta_box = _coerce_box(theta_box, ParamBox, tb_default)
    x_box = _coerce_box(x_box, DesignBox, xb_default)

    if name in ("michaelis_menten", "exp_decay"):
        if theta_box.dim != 2 or np.any(theta_box.lower <= 0):
            raise BoxViolation(f"{name} requires a parameter box inside (0, inf)^2")
        if x_box.dim != 1 or x_box.lower[0] < 0:
            raise BoxViolation(f"{name} requires a design interval [a, b] with a >= 0")
        if name == "michaelis_menten":

            def mu(pts, th):
                x = pts[:, 0]
                return th[0] * x / (th[1] + x)

            def grad(pts, th):
                x = pts[:, 0]
                den = th[1] + x
                return np.stack([x / den, -th[0] * x / den**2], axis=1)

        else:

            def mu(pts, th):
                return th[0] * np.exp(-th[1] * pts[:, 0])

            def grad(pts, th):
                x = pts[:, 0]
                e = np.exp(-th[1] * x)
                return np.stack([e, -th[0] * x * e], axis=1)

        return ModelSpec(
            name=name,
            p=2,
            d=1,
            theta_box=theta_box,
            x_box=x_box,
            flags=frozenset({"SI"}),
            _mu=mu,
            _f_theta=grad,
            _mu_grad=grad,
            options=dict(options),
        )

    if name in _BINARY_LINKS:
        if theta_box.dim != 2 or x_box.dim != 1:
            raise BoxViolation(f"{name} requires a 2-d parameter box and a design interval")
        link = _BINARY_LINKS[name](**options)

        def f_base(pts):
            return np.stack([np.ones(pts.shape[0]), pts[:, 0]], axis=1)

        block = _bernoulli_block(link, _linear_u_range(theta_box, x_box, f_base))
        _preflight_glm(block)

        def mu(pts, th):
            return block.G(th[0] + th[1] * pts[:, 0])

        def f_theta(pts, th):
            u = th[0] + th[1] * pts[:, 0]
            return block.phi(u)[:, None] * f_base(pts)

        def mu_grad(pts, th):
            u = th[0] + th[1] * pts[:, 0]
            return block.Gprime(u)[:, None] * f_base(pts)

        return ModelSpec(
            name=name,
            p=2,
            d=1,
            theta_box=theta_box,
            x_box=x_box,
            flags=frozenset({"GLM", "GLMSTAR"}),
            _mu=mu,
            _f_theta=f_theta,
            _mu_grad=mu_grad,
            glm=block,
            _f_base=f_base,
            options=dict(options),
        )

    # poisson2
    if theta_box.dim != 3 or np.any(theta_box.upper[1:] > 0):
        raise BoxViolation("poisson2 requires a 3-d parameter box with slope components <= 0")
    if x_box.dim != 2 or np.any(x_box.lower != 0):
        raise BoxViolation("poisson2 requires a design box [0, b1] x [0, b2]")

    def f_base3(pts):
        return np.stack([np.ones(pts.shape[0]), pts[:, 0], pts[:, 1]], axis=1)

    block = _poisson_block(_linear_u_range(theta_box, x_box, f_base3))
    _preflight_glm(block)

    def mu3(pts, th):
        return np.exp(f_base3(pts) @ th)

    def f_theta3(pts, th):
        return np.exp(0.5 * (f_base3(pts) @ th))[:, None] * f_base3(pts)

    def mu_grad3(pts, th):
        return np.exp(f_base3(pts) @ th)[:, None] * f_base3(pts)

    return ModelSpec(
        name="poisson2",
        p=3,
        d=2,
        theta_box=theta_box,
        x_box=x_box,
        flags=frozenset({"GLM", "GLMSTAR"}),
        _mu=mu3,
        _f_theta=f_theta3,
        _mu_grad=mu_grad3,
        glm=block,
        _f_base=f_base3,
        options=dict(options),
    )


# --------------------------------------------------------------------------- #
# Gradient verification and canonical transforms
# --------------------------------------------------------------------------- #


def model_to_config(model: ModelSpec) -> dict:
    """JSON-ready description from which :func:`model_from_config` rebuilds."""
    return {
        "name": model.name,
        "theta_box": [model.theta_box.lower.tolist(), model.theta_box.upper.tolist()],
        "x_box": [model.x_box.lower.tolist(), model.x_box.upper.tolist()],
        "options": dict(model.options),
    }


def model_from_config(cfg: dict) -> ModelSpec:
    return builtin(
        cfg["name"],
        theta_box=tuple(cfg.get("theta_box")) if cfg.get("theta_box") else None,
        x_box=tuple(cfg.get("x_box")) if cfg.get("x_box") else None,
        **{k: v for k, v in cfg.get("options", {}).items()},
    )


def verify_gradient(model: ModelSpec, theta, x) -> float | None:
    """Max componentwise gap between the regressor and finite differences of mu.

    Applies to saturated-identifiability models, where the regressor is the
    mean-response gradient; returns ``None`` for GLM-type models whose
    regressor carries the information weight instead.
    """
    if not model.is_si:
        return None
    theta = np.asarray(theta, dtype=float)
    if not model.theta_box.contains(theta, margin=1e-4):
        raise BoxViolation("theta must lie in the interior of the parameter box")
    pts = as_points(x, model.d)
    analytic = np.atleast_2d(model._f_theta(pts, theta))
    fd = np.empty_like(analytic)
    for j in range(model.p):
        h = 1e-6 * (1.0 + abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        fd[:, j] = (model._mu(pts, tp) - model._mu(pts, tm)) / (2.0 * h)
    return float(np.max(np.abs(analytic - fd)))


@dataclass(frozen=True)
class BinaryCanonical:
    """Affine reparametrization z = t1 + t2*x of a binary GLM's design interval."""

    alpha: float
    beta: float
    flipped: bool
    theta: tuple[float, float]

    def forward(self, x):
        return self.theta[0] + self.theta[1] * np.asarray(x, dtype=float)

    def inverse(self, z):
        return (np.asarray(z, dtype=float) - self.theta[0]) / self.theta[1]


def canonical_transform_binary(model: ModelSpec, theta) -> BinaryCanonical:
    """Image [alpha, beta] of the design interval under z = t1 + t2*x."""
    theta = np.asarray(theta, dtype=float)
    if abs(theta[1]) < 1e-12:
        raise DegenerateSlope("canonical transform requires a nonzero slope")
    a, b = model.x_box.lower[0], model.x_box.upper[0]
    za, zb = theta[0] + theta[1] * a, theta[0] + theta[1] * b
    flipped = zb < za
    alpha, beta = (zb, za) if flipped else (za, zb)
    return BinaryCanonical(
        alpha=float(alpha), beta=float(beta), flipped=bool(flipped), theta=(float(theta[0]), float(theta[1]))
    )


@dataclass(frozen=True)
class PoissonCanonical:
    """Coordinatewise rescaling z_j = |slope_j| * x_j of the Poisson design box."""

    case: str  # "i" (both slopes negative), "ii" (exactly one), "iii" (none)
    c: np.ndarray
    scale: np.ndarray  # z = scale * x componentwise, after any coordinate swap
    swapped: bool

    def forward(self, x):
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        if self.swapped:
            pts = pts[:, ::-1]
        out = pts * self.scale
        return out if np.ndim(x) > 1 else out[0]

    def inverse(self, z):
        pts = np.atleast_2d(np.asarray(z, dtype=float)) / self.scale
        if self.swapped:
            pts = pts[:, ::-1]
        return pts if np.ndim(z) > 1 else pts[0]


def canonical_transform_poisson(theta, x_box: DesignBox) -> PoissonCanonical:
    """Case split and rescaling for the two-covariate Poisson model."""
    theta = np.asarray(theta, dtype=float)
    s1, s2 = theta[1], theta[2]
    if s1 > 0 or s2 > 0:
        raise BoxViolation("poisson slope components must be <= 0")
    b = x_box.upper.copy()
    if s1 < 0 and s2 < 0:
        case, swapped, scale = "i", False, np.array([-s1, -s2])
    elif s1 == 0 and s2 == 0:
        case, swapped, scale = "iii", False, np.array([1.0, 1.0])
    elif s1 < 0:
        case, swapped, scale = "ii", False, np.array([-s1, 1.0])
    else:  # s1 == 0, s2 < 0: put the scaled coordinate first
        case, swapped, scale = "ii", True, np.array([-s2, 1.0])
        b = b[::-1]
    return PoissonCanonical(case=case, c=scale * b, scale=scale, swapped=swapped)
