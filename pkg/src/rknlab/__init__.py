"""Runge-Kutta-Nystrom time integration for linear second-order systems."""
from .experiments import ExperimentConfig, format_csv, observed_orders, run_experiment, stable_step
from .linalg import SolverConfig, StageOperator, gmres_solve, lump_mass, power_iteration_genev
from .models import (
    ExactSolution,
    SecondOrderSystem,
    assemble_beam_1d,
    assemble_telegraph_1d,
    assemble_wave_1d,
    assemble_wave_2d,
    bump_initial,
    build_model,
    energy,
    manufactured_problem,
    oscillator,
)
from .stepping import (
    CentralStepper,
    NystromStepper,
    RKStepper,
    StepState,
    reduce_first_order,
    rk_step,
    rkn_step,
)
from .tableau import (
    ButcherTableau,
    NystromTableau,
    classical_nystrom_tableau,
    collocation_tableau,
    extend_tableau,
    get_tableau,
    triangular_approx,
    verify_order,
)

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "format_csv",
    "observed_orders",
    "run_experiment",
    "stable_step",
    "SolverConfig",
    "StageOperator",
    "gmres_solve",
    "lump_mass",
    "power_iteration_genev",
    "ExactSolution",
    "bump_initial",
    "SecondOrderSystem",
    "assemble_beam_1d",
    "assemble_telegraph_1d",
    "assemble_wave_1d",
    "assemble_wave_2d",
    "build_model",
    "energy",
    "manufactured_problem",
    "oscillator",
    "CentralStepper",
    "NystromStepper",
    "RKStepper",
    "StepState",
    "reduce_first_order",
    "rk_step",
    "rkn_step",
    "ButcherTableau",
    "NystromTableau",
    "classical_nystrom_tableau",
    "collocation_tableau",
    "extend_tableau",
    "get_tableau",
    "triangular_approx",
    "verify_order",
]
