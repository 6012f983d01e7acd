"""Adaptive batch-sequential D-optimal design for nonlinear regression.

The package implements locally D-optimal saturated designs for four model
families (saturating rate, exponential decay, binary GLMs, two-covariate
Poisson), an adaptive algorithm that augments the design by p points per
step at the current estimate, the one-point-per-step comparator, adaptive
least-squares and maximum-likelihood estimation over compact parameter
boxes, Kiefer-Wolfowitz optimality verification, and a reproducible Monte
Carlo harness with a CLI.
"""

from . import _kernels as kernels
from .designs import Design, d_efficiency, information_matrix, kw_check, kw_sensitivity, log_det
from .estimators import (
    Dataset,
    ErrorModel,
    Estimate,
    FitOptions,
    SampleStream,
    lse_fit,
    mle_fit,
    sample_response,
)
from .models import (
    DesignBox,
    GLMBlock,
    ModelSpec,
    ParamBox,
    builtin,
    canonical_transform_binary,
    canonical_transform_poisson,
    verify_gradient,
)
from .saturated import (
    NumericOptions,
    SaturatedSolution,
    TwoPointProblem,
    best_saturated,
    solve_saturated_closed_form,
    solve_saturated_numeric,
    solve_two_point_bounded,
    solve_unbounded_two_point,
    verify_saturated_vs_kw,
)

__version__ = "0.1.0"
