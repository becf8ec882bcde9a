"""Damped wave equations as limits of minimizers of exponentially weighted
space-time functionals, on a periodic interval.

Submodules: ``spatial`` (grids, potentials, dissipations), ``timeweight``
(weighted time calculus), ``source`` (forcing and its approximations),
``variational`` (the discrete functional), ``solver`` (minimization and the
eps continuation), ``reference`` (method-of-lines oracle), ``diagnostics``
(energies, relations, bounds) and ``cli``.
"""

from .diagnostics import (EnergyTrace, apriori_report, check_energy_bounds,
                          check_energy_inequality, check_relation_t, check_relation_zero,
                          convergence_table, energy_traces, required_constants)
from .reference import ProblemSpec, linear_mode_solution, solve_mol
from .solver import MinimizeOptions, continuation, minimize
from .source import build_f_eps, single_mode_source, verify_source_conditions, zero_source
from .spatial import GSpec, SpatialGrid, WSpec, WTerm, preset
from .timeweight import TAIL, TimeGrid, Trajectory, avg_A, avg_A2
from .variational import eval_J, grad_J, make_functional

__version__ = "0.1.0"

__all__ = [
    "SpatialGrid", "WSpec", "WTerm", "GSpec", "preset",
    "TAIL", "TimeGrid", "Trajectory", "avg_A", "avg_A2",
    "zero_source", "single_mode_source", "build_f_eps", "verify_source_conditions",
    "make_functional", "eval_J", "grad_J",
    "MinimizeOptions", "minimize", "continuation",
    "ProblemSpec", "solve_mol", "linear_mode_solution",
    "EnergyTrace", "energy_traces", "check_relation_zero", "check_relation_t",
    "check_energy_bounds", "required_constants", "check_energy_inequality",
    "apriori_report", "convergence_table",
]
