"""Adaptive design drivers.

``run_p_step`` implements the batch algorithm: at every step the design is
augmented by the p-point support that is locally D-optimal (among saturated
designs) at the current estimate, the batch responses are sampled, and the
estimate is refit on all data.  ``run_wynn`` is the one-point-per-step
comparator that adds the maximizer of the sensitivity function instead.
Both record the full path (points, responses, per-step estimates and design
diagnostics) in a :class:`PathRecord` that replays deterministically from
its seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .designs import Design
from .errors import (
    MissingGLMBlock,
    PathAborted,
    RecordIntegrityError,
    SingularInformation,
    VersionMismatch,
)
from .estimators import (
    Dataset,
    ErrorModel,
    FitOptions,
    SampleStream,
    lse_fit,
    mle_fit,
    sample_response,
)
from .models import ModelSpec, model_from_config, model_to_config
from .saturated import NumericOptions, batch_objective, best_saturated

__all__ = ["RunConfig", "PathRecord", "run_p_step", "run_wynn", "replay", "RECORD_VERSION"]

RECORD_VERSION = 1
_SINGULAR_EIG = 1e-10


@dataclass(frozen=True)
class RunConfig:
    """One adaptive run: model, truth, estimator, error model, and budget."""

    model: ModelSpec
    theta_true: np.ndarray
    estimator: str  # "lse" | "mle"
    error: ErrorModel
    steps: int
    seed: int = 0
    path_index: int = 0
    initial_points: np.ndarray | None = None  # default: optimal batch at the box center
    solver: str = "closed_form_preferred"
    numeric_opts: NumericOptions = field(default_factory=NumericOptions)
    fit_opts: FitOptions = field(default_factory=FitOptions)
    wynn_grid_n: int = 2001
    m_star_det: float | None = None  # reference determinant for efficiency diagnostics

    def __post_init__(self):
        object.__setattr__(
            self, "theta_true", np.asarray(self.theta_true, dtype=float)
        )
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.estimator not in ("lse", "mle"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.estimator == "mle" and self.model.glm is None:
            raise MissingGLMBlock("mle estimator requires a model with a GLM block")
        if not self.model.theta_box.contains(self.theta_true):
            raise ValueError("theta_true must lie in the parameter box")

    def resolved_initial_points(self) -> np.ndarray:
        if self.initial_points is not None:
            pts = np.atleast_2d(np.asarray(self.initial_points, dtype=float))
            if pts.shape[1] != self.model.d:
                raise ValueError("initial points have the wrong dimension")
            return pts
        sol = best_saturated(
            self.model, self.model.theta_box.center, self.solver, self.numeric_opts
        )
        return sol.points


@dataclass
class PathRecord:
    """Everything one realized run produced, sufficient for exact replay."""

    version: int
    algorithm: str  # "p_step" | "wynn"
    model_config: dict
    theta_true: np.ndarray
    estimator: str
    error_kind: str
    error_sigma: float
    seed: int
    path_index: int
    solver: str
    n1: int
    p: int
    d: int
    steps: int
    xs: np.ndarray  # (n, d)
    ys: np.ndarray  # (n,)
    estimates: np.ndarray  # (steps + 1, p)
    batches: np.ndarray  # (steps, batch_size, d)
    batch_objectives: np.ndarray  # (steps,)
    det_m_true: np.ndarray  # (steps + 1,)
    d_eff: np.ndarray | None  # (steps + 1,) when a reference determinant is known
    fit_converged: np.ndarray  # (steps + 1,) bool
    fit_reused: np.ndarray  # (steps + 1,) bool; True when a failed refit kept the previous estimate
    m_star_det: float | None

    @property
    def batch_size(self) -> int:
        return self.batches.shape[1]

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    def n_at_step(self, k: int) -> int:
        """Total observations after step k (k=0 is the initial design)."""
        return self.n1 + k * self.batch_size

    def design_at_step(self, k: int) -> Design:
        return Design.from_observations(self.xs[: self.n_at_step(k)])

    def validate(self) -> None:
        if self.version != RECORD_VERSION:
            raise VersionMismatch(
                f"record version {self.version}, expected {RECORD_VERSION}"
            )
        n_expect = self.n1 + self.steps * self.batch_size
        checks = [
            self.xs.shape == (n_expect, self.d),
            self.ys.shape == (n_expect,),
            self.estimates.shape == (self.steps + 1, self.p),
            self.batches.shape == (self.steps, self.batch_size, self.d),
            self.batch_objectives.shape == (self.steps,),
            self.det_m_true.shape == (self.steps + 1,),
            self.d_eff is None or self.d_eff.shape == (self.steps + 1,),
            self.fit_converged.shape == (self.steps + 1,),
            self.fit_reused.shape == (self.steps + 1,),
        ]
        if not all(checks):
            raise RecordIntegrityError("path record arrays are inconsistent with its header")

    def to_dict(self) -> dict:
        return {
            "schema": "adaptdesign/path-record",
            "version": self.version,
            "algorithm": self.algorithm,
            "model": self.model_config,
            "theta_true": self.theta_true.tolist(),
            "estimator": self.estimator,
            "error": {"kind": self.error_kind, "sigma": self.error_sigma},
            "seed": self.seed,
            "path_index": self.path_index,
            "solver": self.solver,
            "n1": self.n1,
            "p": self.p,
            "d": self.d,
            "steps": self.steps,
            "xs": self.xs.tolist(),
            "ys": self.ys.tolist(),
            "estimates": self.estimates.tolist(),
            "batches": self.batches.tolist(),
            "batch_objectives": self.batch_objectives.tolist(),
            "det_m_true": self.det_m_true.tolist(),
            "d_eff": None if self.d_eff is None else self.d_eff.tolist(),
            "fit_converged": self.fit_converged.astype(int).tolist(),
            "fit_reused": self.fit_reused.astype(int).tolist(),
            "m_star_det": self.m_star_det,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "PathRecord":
        try:
            rec = cls(
                version=payload["version"],
                algorithm=payload["algorithm"],
                model_config=payload["model"],
                theta_true=np.asarray(payload["theta_true"], dtype=float),
                estimator=payload["estimator"],
                error_kind=payload["error"]["kind"],
                error_sigma=float(payload["error"].get("sigma", 0.0)),
                seed=payload["seed"],
                path_index=payload["path_index"],
                solver=payload["solver"],
                n1=payload["n1"],
                p=payload["p"],
                d=payload["d"],
                steps=payload["steps"],
                xs=np.asarray(payload["xs"], dtype=float).reshape(-1, payload["d"]),
                ys=np.asarray(payload["ys"], dtype=float),
                estimates=np.asarray(payload["estimates"], dtype=float),
                batches=np.asarray(payload["batches"], dtype=float),
                batch_objectives=np.asarray(payload["batch_objectives"], dtype=float),
                det_m_true=np.asarray(payload["det_m_true"], dtype=float),
                d_eff=None
                if payload.get("d_eff") is None
                else np.asarray(payload["d_eff"], dtype=float),
                fit_converged=np.asarray(payload["fit_converged"], dtype=bool),
                fit_reused=np.asarray(payload["fit_reused"], dtype=bool),
                m_star_det=payload.get("m_star_det"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise RecordIntegrityError(f"malformed path record: {exc}") from exc
        if rec.version != RECORD_VERSION:
            raise VersionMismatch(f"record version {rec.version}, expected {RECORD_VERSION}")
        rec.validate()
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PathRecord":
        return cls.from_dict(json.loads(text))


class _PathState:
    """Growing observation arrays plus incremental truth-side diagnostics."""

    def __init__(self, cfg: RunConfig, batch_size: int, algorithm: str):
        self.cfg = cfg
        model = cfg.model
        init = cfg.resolved_initial_points()
        self.n1 = init.shape[0]
        n_total = self.n1 + cfg.steps * batch_size
        self.xs = np.empty((n_total, model.d))
        self.ys = np.empty(n_total)
        self.n = 0
        self.stream = SampleStream(cfg.seed, cfg.path_index)
        self.f_true_gram = np.zeros((model.p, model.p))
        self.det_m_true: list[float] = []
        self.estimates: list[np.ndarray] = []
        self.fit_converged: list[bool] = []
        self.fit_reused: list[bool] = []
        self.batches: list[np.ndarray] = []
        self.batch_objectives: list[float] = []
        self.algorithm = algorithm
        self.batch_size = batch_size
        self._append_and_sample(init)

    def _append_and_sample(self, pts: np.ndarray) -> None:
        model, cfg = self.cfg.model, self.cfg
        for row in pts:
            rng = self.stream.rng(self.n)
            y = sample_response(model, row, cfg.theta_true, cfg.error, rng)
            self.xs[self.n] = row
            self.ys[self.n] = y
            self.n += 1
        F = model._f_theta(pts, cfg.theta_true)
        self.f_true_gram += F.T @ F

    def record_design_diag(self) -> None:
        M = self.f_true_gram / self.n
        sign, ld = np.linalg.slogdet(M)
        self.det_m_true.append(float(sign * np.exp(ld)) if sign > 0 else 0.0)

    def dataset(self) -> Dataset:
        return Dataset(self.xs[: self.n], self.ys[: self.n], d=self.cfg.model.d)

    def fit(self, warm: np.ndarray | None) -> None:
        cfg = self.cfg
        fit_fn = mle_fit if cfg.estimator == "mle" else lse_fit
        data = self.dataset()
        if warm is not None:
            est = fit_fn(data, cfg.model, replace(cfg.fit_opts, starts=1, warm_start=warm))
            if not est.converged:
                full = fit_fn(data, cfg.model, replace(cfg.fit_opts, warm_start=warm))
                better = (
                    full.objective > est.objective
                    if cfg.estimator == "mle"
                    else full.objective < est.objective
                )
                if better or full.converged:
                    est = full
        else:
            est = fit_fn(data, cfg.model, cfg.fit_opts)
        if not est.converged and warm is not None:
            # keep the previous estimate rather than an unconverged refit
            self.estimates.append(np.asarray(warm, dtype=float))
            self.fit_converged.append(False)
            self.fit_reused.append(True)
        else:
            self.estimates.append(est.theta_hat)
            self.fit_converged.append(bool(est.converged))
            self.fit_reused.append(False)

    def finish(self) -> PathRecord:
        cfg = self.cfg
        det = np.asarray(self.det_m_true)
        d_eff = None
        if cfg.m_star_det is not None and cfg.m_star_det > 0:
            d_eff = (det / cfg.m_star_det) ** (1.0 / cfg.model.p)
        rec = PathRecord(
            version=RECORD_VERSION,
            algorithm=self.algorithm,
            model_config=model_to_config(cfg.model),
            theta_true=cfg.theta_true.copy(),
            estimator=cfg.estimator,
            error_kind=cfg.error.kind,
            error_sigma=cfg.error.sigma,
            seed=cfg.seed,
            path_index=cfg.path_index,
            solver=cfg.solver,
            n1=self.n1,
            p=cfg.model.p,
            d=cfg.model.d,
            steps=cfg.steps,
            xs=self.xs,
            ys=self.ys,
            estimates=np.asarray(self.estimates),
            batches=np.asarray(self.batches).reshape(cfg.steps, self.batch_size, cfg.model.d),
            batch_objectives=np.asarray(self.batch_objectives),
            det_m_true=det,
            d_eff=d_eff,
            fit_converged=np.asarray(self.fit_converged, dtype=bool),
            fit_reused=np.asarray(self.fit_reused, dtype=bool),
            m_star_det=cfg.m_star_det,
        )
        rec.validate()
        return rec


def run_p_step(cfg: RunConfig) -> PathRecord:
    """Run the batch algorithm for cfg.steps steps and record the path.

    Each step solves the saturated design problem at the current estimate
    (closed form when available, numeric otherwise), appends the batch in
    canonical order, samples its responses, and refits on all data.  A refit
    that fails to converge keeps the previous estimate and is flagged.
    """
    state = _PathState(cfg, batch_size=cfg.model.p, algorithm="p_step")
    state.record_design_diag()
    state.fit(warm=None)
    for _ in range(cfg.steps):
        theta_k = state.estimates[-1]
        sol = best_saturated(cfg.model, theta_k, cfg.solver, cfg.numeric_opts)
        if not sol.objective > 0:
            raise PathAborted(
                f"saturated solver returned a singular batch at estimate {theta_k!r}"
            )
        state.batches.append(sol.points)
        state.batch_objectives.append(sol.objective)
        state._append_and_sample(sol.points)
        state.record_design_diag()
        state.fit(warm=theta_k)
    return state.finish()


def _wynn_probe(cfg: RunConfig, init: np.ndarray) -> None:
    model = cfg.model
    design = Design.from_observations(init)
    axes = [
        np.linspace(model.theta_box.lower[j], model.theta_box.upper[j], 3)
        for j in range(model.p)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    thetas = np.stack([m.ravel() for m in mesh], axis=-1)
    F_all = [model._f_theta(design.points, t) for t in thetas]
    for t, F in zip(thetas, F_all):
        M = (design.weights[:, None] * F).T @ F
        if np.linalg.eigvalsh(M)[0] <= _SINGULAR_EIG:
            raise SingularInformation(
                f"initial design information is singular at theta={t!r}"
            )


def _sensitivity_argmax(
    model: ModelSpec, theta, xs_n: np.ndarray, grid_n: int
) -> tuple[np.ndarray, float]:
    """Maximize f^T M^{-1} f over the design box: dense grid plus local refinement."""
    F_obs = model._f_theta(xs_n, theta)
    M = (F_obs.T @ F_obs) / xs_n.shape[0]
    eigs = np.linalg.eigvalsh(M)
    if eigs[0] <= _SINGULAR_EIG:
        raise SingularInformation(
            f"design information singular at the current estimate (eig {eigs[0]:.3e})"
        )
    Minv = np.linalg.inv(M)

    def d_many(pts):
        F = model._f_theta(pts, theta)
        return np.einsum("ij,jk,ik->i", F, Minv, F)

    lo, hi = model.x_box.lower, model.x_box.upper
    if model.d == 1:
        grid = np.linspace(lo[0], hi[0], grid_n).reshape(-1, 1)
    else:
        from .designs import box_grid

        grid = box_grid(model.x_box, grid_n)
    vals = d_many(grid)
    best = grid[int(np.argmax(vals))]
    width = (hi - lo) / (grid_n - 1)
    for _ in range(3):
        axes = [
            np.linspace(
                max(lo[j], best[j] - width[j]), min(hi[j], best[j] + width[j]), 17
            )
            for j in range(model.d)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        local = np.stack([m.ravel() for m in mesh], axis=-1)
        lv = d_many(local)
        best = local[int(np.argmax(lv))]
        width = width / 8.0
    return best, float(np.max(lv))


def run_wynn(cfg: RunConfig) -> PathRecord:
    """Run the one-point-per-step comparator and record the path.

    Requires the initial information matrix to be nonsingular over the whole
    parameter box (checked on a coarse grid probe); each step appends the
    sensitivity maximizer at the current estimate and refits.
    """
    init = cfg.resolved_initial_points()
    _wynn_probe(cfg, init)
    state = _PathState(cfg, batch_size=1, algorithm="wynn")
    state.record_design_diag()
    state.fit(warm=None)
    for _ in range(cfg.steps):
        theta_k = state.estimates[-1]
        try:
            x_next, sens = _sensitivity_argmax(
                cfg.model, theta_k, state.xs[: state.n], cfg.wynn_grid_n
            )
        except SingularInformation as exc:
            raise PathAborted(f"comparator aborted: {exc}") from exc
        pts = x_next.reshape(1, -1)
        state.batches.append(pts)
        # single-point steps: record the attained sensitivity as the objective
        state.batch_objectives.append(sens)
        state._append_and_sample(pts)
        state.record_design_diag()
        state.fit(warm=theta_k)
    return state.finish()


def replay(record: PathRecord, cfg: RunConfig | None = None) -> PathRecord:
    """Re-execute a recorded path from its seed; the result must match bitwise.

    When ``cfg`` is omitted the run configuration is rebuilt from the record
    (builtin models only).  Raises :class:`VersionMismatch` for records from
    another artifact version and :class:`RecordIntegrityError` for truncated
    or inconsistent records.
    """
    record.validate()
    if cfg is None:
        cfg = RunConfig(
            model=model_from_config(record.model_config),
            theta_true=record.theta_true,
            estimator=record.estimator,
            error=(
                ErrorModel.gaussian(record.error_sigma)
                if record.error_kind == "gaussian"
                else ErrorModel.exponential_family()
            ),
            steps=record.steps,
            seed=record.seed,
            path_index=record.path_index,
            initial_points=record.xs[: record.n1],
            solver=record.solver,
            m_star_det=record.m_star_det,
        )
    runner = run_p_step if record.algorithm == "p_step" else run_wynn
    return runner(cfg)
