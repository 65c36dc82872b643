"""Kinetically constrained spin models on regular trees and the North-East lattice."""

__version__ = "0.1.0"

from .bootstrap import (
    BootstrapResult,
    RootEvent,
    aux_constraint,
    bootstrap_fixpoint,
    bootstrap_iterate,
    bootstrap_step,
    event_A,
    is_pivotal,
    stable_occupied,
)
from .exceptions import ConvergenceError, InsufficientDataError, ResourceCapError
from .glauber import SimConfig, TrajectoryStats, autocorrelation, frozen_probe, simulate
from .graph import Boundary, Family, GraphKind, ModelSpec, SiteGraph, build_graph, constraint_satisfied, sample_config
from .northeast import NEReport, estimate_p_ell, ne_aux_constraint, ne_bootstrap, ne_dynamics, ne_quadrant
from .spectral import DirichletReport, GeneratorSpectrum, MonteCarlo, build_generator, dirichlet_ratio, exact_gap, predicted_decay_rate
from .threshold import (
    critical_density,
    ell_zero,
    eval_g,
    eval_g_prime,
    frozen_fraction_unrooted,
    iterate_recursion,
    largest_fixed_point,
)

__all__ = [
    "BootstrapResult",
    "RootEvent",
    "aux_constraint",
    "bootstrap_fixpoint",
    "bootstrap_iterate",
    "bootstrap_step",
    "event_A",
    "is_pivotal",
    "stable_occupied",
    "ConvergenceError",
    "InsufficientDataError",
    "ResourceCapError",
    "SimConfig",
    "TrajectoryStats",
    "autocorrelation",
    "frozen_probe",
    "simulate",
    "Boundary",
    "Family",
    "GraphKind",
    "ModelSpec",
    "SiteGraph",
    "build_graph",
    "constraint_satisfied",
    "sample_config",
    "NEReport",
    "estimate_p_ell",
    "ne_aux_constraint",
    "ne_bootstrap",
    "ne_dynamics",
    "ne_quadrant",
    "DirichletReport",
    "GeneratorSpectrum",
    "MonteCarlo",
    "build_generator",
    "dirichlet_ratio",
    "exact_gap",
    "predicted_decay_rate",
    "critical_density",
    "ell_zero",
    "eval_g",
    "eval_g_prime",
    "frozen_fraction_unrooted",
    "iterate_recursion",
    "largest_fixed_point",
]
