"""Sampling the invariant measure of constrained Langevin dynamics on
codimension-1 manifolds with projected stochastic Runge-Kutta schemes:
tableau certification, a batched projected integrator, a Monte-Carlo
harness, and deterministic quadrature references."""

from .errors import (
    ConfigError,
    DomainError,
    InvalidTableauError,
    ManrkError,
    NewtonFailureError,
    PreconditionError,
    QuadratureError,
    QualityError,
    SingularProjectionError,
    SweepConvergenceError,
    TableauStructureError,
)
from .integrator import (
    NewtonControls,
    NoiseSpec,
    StepOutcome,
    draw_noise_block,
    sample_noise,
    solve_stage,
    step,
)
from .manifold import Manifold, default_start, make_custom, make_special_linear, make_sphere, make_torus
from .order_conditions import (
    ConditionReport,
    Residual,
    ResidualGroup,
    classify,
    consistency_residuals,
    invmeas2_residuals,
    invmeas2_residuals_delta_one,
    sphere_residuals,
    bm_sphere_residuals,
    weak2_residuals,
)
from .potentials import Observable, Potential, builtin_observable, builtin_potential
from .quadrature import ReferenceValue, sphere_reference, torus_reference
from .sampler import (
    ConvergenceReport,
    ConvergenceRow,
    EstimateResult,
    SimConfig,
    TrajectoryResult,
    convergence_study,
    estimate,
    estimate_time_average,
    run_trajectory,
    simconfig_from_dict,
    simconfig_to_dict,
    trajectory_rng,
)
from .tableau import BUILTIN_NAMES, ButcherTableau, builtin, diamond, diamond_pow

__version__ = "0.1.0"
