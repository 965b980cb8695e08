"""Signature-kernel collocation solver for linear path-dependent PDEs."""

from .numerics import NumericalError
from .paths import (
    BergomiParams,
    FbmSpec,
    Path,
    TimeGrid,
    make_kernel_direction,
    one_variation,
    simulate_forward_volterra,
    simulate_theta,
    simulate_volterra,
    sup_norm,
    time_augment,
)
from .static_kernels import AField, RbfLift, RbfParams, a_fields, rbf, rbf_dx, rbf_dxx
from .sig_oracle import (
    TruncatedSignature,
    chen_concat,
    fd_directional_derivative,
    fd_second,
    path_signature,
    segment_signature,
    truncated_kernel,
)
from .goursat import GoursatSolution, kernel_only, solve, two_sided_corners
from .operator import CollocationPoint, PpdeSpec, apply_L, product_kernel
from .recovery import (
    GramSystem,
    NonConvergenceError,
    RecoveryModel,
    assemble,
    gp_posterior,
    predict,
    solve_linear,
    solve_nonlinear,
)
from .experiments import (
    ExperimentConfig,
    MetricsReport,
    analytic_fbm_price,
    cross_validate,
    mc_bergomi_price,
    run_bergomi,
    run_fbm,
    run_fbm_suite,
)

__all__ = [
    "AField",
    "BergomiParams",
    "CollocationPoint",
    "ExperimentConfig",
    "FbmSpec",
    "GoursatSolution",
    "GramSystem",
    "MetricsReport",
    "NonConvergenceError",
    "NumericalError",
    "Path",
    "PpdeSpec",
    "RbfLift",
    "RbfParams",
    "RecoveryModel",
    "TimeGrid",
    "TruncatedSignature",
    "a_fields",
    "analytic_fbm_price",
    "apply_L",
    "assemble",
    "chen_concat",
    "cross_validate",
    "fd_directional_derivative",
    "fd_second",
    "gp_posterior",
    "kernel_only",
    "make_kernel_direction",
    "mc_bergomi_price",
    "one_variation",
    "path_signature",
    "predict",
    "product_kernel",
    "rbf",
    "rbf_dx",
    "rbf_dxx",
    "run_bergomi",
    "run_fbm",
    "run_fbm_suite",
    "segment_signature",
    "simulate_forward_volterra",
    "simulate_theta",
    "simulate_volterra",
    "solve",
    "solve_linear",
    "solve_nonlinear",
    "sup_norm",
    "time_augment",
    "truncated_kernel",
    "two_sided_corners",
]
