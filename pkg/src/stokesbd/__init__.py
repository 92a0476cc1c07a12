"""Linear-scaling Stokes mobility solver and Brownian dynamics for rigid
particles in a periodic 2D domain.

The solver splits the periodized Stokeslet into a short-ranged real-space
part and a smooth wave-space part evaluated on an FFT grid, applies a
locally corrected trapezoid rule for the weakly singular boundary
integrals, and draws Brownian increments whose covariance matches the
discrete body mobility without forming it.
"""

from .geometry import (
    Body,
    Configuration,
    Disk,
    FourierCurve,
    PeriodicDomain,
    Starfish,
    SurfaceMesh,
    build_cell_list,
    config_from_json,
    config_to_json,
    discretize,
    generate_packed_config,
    generate_random_config,
    min_image,
    place,
)
from .ewald import (
    EwaldPlan,
    SparseNearField,
    full_matvec,
    near_field_export,
    select_params,
    wave_matvec,
)
from .fluctuations import (
    GaussianStream,
    SqrtWorkspace,
    lanczos_sqrt,
    precompute_sqrt_workspace,
    sample_near_sqrt,
    sample_surface_velocity,
    sample_wave_sqrt,
    wave_noise,
)
from .kernels import SplitParams, exp_integral_e1, hasimoto_hat, perp
from .mobility import (
    BlockPreconditioner,
    ConvergenceError,
    SaddleResult,
    apply_K,
    apply_KT,
    body_mobility_dense,
    gmres,
    precompute_preconditioner,
    solve_saddle,
)
from .quadrature import AlpertRule, alpert_reference, get_rule

__all__ = [
    "AlpertRule",
    "BlockPreconditioner",
    "Body",
    "Configuration",
    "ConvergenceError",
    "Disk",
    "EwaldPlan",
    "FourierCurve",
    "GaussianStream",
    "PeriodicDomain",
    "SaddleResult",
    "SparseNearField",
    "SplitParams",
    "SqrtWorkspace",
    "Starfish",
    "SurfaceMesh",
    "alpert_reference",
    "apply_K",
    "apply_KT",
    "body_mobility_dense",
    "build_cell_list",
    "config_from_json",
    "config_to_json",
    "discretize",
    "exp_integral_e1",
    "full_matvec",
    "generate_packed_config",
    "generate_random_config",
    "get_rule",
    "gmres",
    "hasimoto_hat",
    "lanczos_sqrt",
    "min_image",
    "near_field_export",
    "perp",
    "place",
    "precompute_preconditioner",
    "precompute_sqrt_workspace",
    "sample_near_sqrt",
    "sample_surface_velocity",
    "sample_wave_sqrt",
    "select_params",
    "solve_saddle",
    "wave_matvec",
    "wave_noise",
]
