"""Simulation and verification lab for spatial Lambda-Fleming-Viot limits.

The package splits along the objects of study: `core` holds scaling
parameters, event laws, ladders, and test functions; `events` generates
reproduction events; `forward` evolves the frequency field exactly in
d = 1 and on lattices; `dual` runs the coalescing lineage system;
`analytic` provides the deterministic machinery (semigroups, the stable
branching operator, the dual exponent equation, special-function bounds);
`oracle` simulates branching particle approximations of the limits; and
`harness`/`cli` wrap everything in deterministic, artifact-producing
experiments.
"""

from .core import (
    ConditionReport,
    Event,
    FixedRadius,
    LimitParams,
    Rung,
    ScalingParams,
    TestFunction,
    VariableRadius,
    ball_normalized_kappa,
    ball_volume,
    default_battery,
    finite_ratios_fixed,
    finite_ratios_variable,
    fixed_ladder,
    gaussian_hump,
    limit_params_fixed,
    limit_params_variable,
    quartic_bump,
    replicate_stream,
    stable_kappa0,
    validate_fixed_radius_conditions,
    validate_variable_radius_conditions,
    variable_ladder,
)
from .forward import (
    ForwardLedger,
    Interval1DField,
    PiecewiseInitial,
    density_block,
    run_forward,
    run_forward_plain,
    two_level_step,
    uniform_block,
)
from .dual import (
    LineageSet,
    batch_pair_coalescence,
    batch_single_displacement,
    coalescence_probability,
    duality_gap,
    hazard_bound,
    run_dual,
)
from .analytic import (
    Grid1D,
    bn_operator,
    compound_poisson_semigroup,
    dawson_inequalities,
    g_function,
    heat_semigroup,
    lfv_nonspatial_generator,
    solve_v_equation,
    stable_exponent_integral,
)
from .oracle import (
    CriticalBinary,
    ParticleCloud,
    StableOffspring,
    laplace_functional,
    run_sbm_particles,
    stable_offspring_pmf,
    stable_total_mass_reference,
)
from .harness import (
    ExperimentSpec,
    StatReport,
    exponential_martingale_test,
    moment_diagnostic,
    run_experiment,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
