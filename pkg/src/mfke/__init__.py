"""Particle laboratory for McKean and McKean Feynman-Kac representations of
nonlinear, non-conservative Fokker-Planck equations."""
from __future__ import annotations

from ._backend import BACKEND
from .engine import GridSpec, SimConfig, Trajectory, simulate
from .errors import ConfigError, DomainError, NumericalAbort, OracleInstability
from .measures import (
    DensitySnapshot,
    Mollifier,
    ParticleEnsemble,
    empirical_test_functional,
    kde_density,
    kde_gradient,
    normalize,
    wasserstein1,
)
from .problems import ProblemSpec, Sampler, builtin_problem

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "DensitySnapshot",
    "DomainError",
    "GridSpec",
    "Mollifier",
    "NumericalAbort",
    "OracleInstability",
    "ParticleEnsemble",
    "ProblemSpec",
    "Sampler",
    "SimConfig",
    "Trajectory",
    "builtin_problem",
    "empirical_test_functional",
    "kde_density",
    "kde_gradient",
    "normalize",
    "simulate",
    "wasserstein1",
]
