"""Underdamped Langevin Monte Carlo and its random-coordinate variant.

Modules
-------
potentials  target densities exp(-f) with value, gradient and partial derivatives
kernel      exact moments of one frozen-gradient step
samplers    ULMC and RC-ULMC chains, coordinate schedules, stepsize checks
engine      compiled many-chain driver for quadratic targets
oracles     exact laws and moment recursions used as references
metrics     moment error, spectral norm, Lyapunov diagnostic
harness     experiment configs, runner and command-line interface
"""

from .kernel import StepMoments, cholesky2x2, step_mean, step_moments
from .potentials import (
    CostLedger,
    GraphTarget,
    ProductExperimentTarget,
    QuadraticTarget,
    TargetPotential,
    condition_numbers,
)
from .samplers import (
    AdmissibilityError,
    Algorithm,
    CoordinateSchedule,
    InitialDistribution,
    PhaseState,
    SamplerConfig,
    optimal_phi,
    rc_ulmc_step,
    run_chain,
    ulmc_step,
    validate_stepsize,
)

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityError",
    "Algorithm",
    "CoordinateSchedule",
    "CostLedger",
    "GraphTarget",
    "InitialDistribution",
    "PhaseState",
    "ProductExperimentTarget",
    "QuadraticTarget",
    "SamplerConfig",
    "StepMoments",
    "TargetPotential",
    "cholesky2x2",
    "condition_numbers",
    "optimal_phi",
    "rc_ulmc_step",
    "run_chain",
    "step_mean",
    "step_moments",
    "ulmc_step",
    "validate_stepsize",
]
