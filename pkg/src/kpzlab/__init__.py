"""Simulation and verification toolkit for weakly asymmetric speed-change
exclusion processes and their KPZ / stochastic heat equation scaling limits.

Submodules
----------
lattice    ring configurations, local-function tables, rate models
ensembles  exact canonical-ensemble calculus and sector spectral gaps
dynamics   event-driven exact simulation of the generator
fields     fluctuation fields, martingale decomposition, currents, interfaces
she        discretized multiplicative stochastic heat equation, Cole-Hopf
harness    replicated experiments, estimators, statistical gates
cli        command-line front end and manifest/IO formats
"""

__version__ = "0.1.0"

from . import dynamics, ensembles, fields, harness, lattice, she
from .dynamics import Params, estimate_events, replica_rng, run_measured
from .ensembles import (
    canonical_moment_bounds,
    expansion_residual,
    psi_canonical,
    psi_canonical_table,
    sector_configurations,
    spectral_gap,
    write_residual_table,
)
from .fields import (
    TestFunction,
    current_and_height,
    decomposition_observables,
    drift_observable,
    eval_Y,
    interface_pairing,
    martingale_decompose,
    mean_current_rate,
    quad_field_observable,
    ramp_cutoff,
    smoothed_square,
    y_observable,
)
from .harness import (
    ExperimentPlan,
    bg2_sweep,
    compare_particle_vs_she,
    holder_estimate,
    make_test_function,
    resolve_budget,
    resolve_rates,
    run_plan,
    scaling_exponent,
    white_noise_marginal_test,
)
from .lattice import (
    Configuration,
    RateModel,
    WindowFunction,
    eval_all,
    eval_local,
    find_gradient_witness,
    gradient_b,
    grand_canonical_mean,
    monomial_decompose,
    psi_polynomial,
    sample_canonical,
    sample_grand_canonical,
    swap_bond,
    wasep,
)
from .manifest import load_manifest, validate_manifest, write_manifest
from .she import (
    SheCoefficients,
    SheField,
    cole_hopf,
    heat_kernel,
    init_stationary,
    run_she,
    she_ensemble,
    step_mild,
)
