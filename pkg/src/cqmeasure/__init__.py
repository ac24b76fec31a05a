"""Hybrid classical-quantum ensembles: a classical pointer measuring a quantum particle.

Modules
-------
core         parameters, grids, quadrature, Gaussian mixtures, state containers
analytic     closed-form solutions and energy functionals
dynamics     grid integrator for the coupled continuity / Hamilton-Jacobi system
measurement  pointer mixtures, readout and the particle posterior
phase_space  phase-space densities of free classical mixtures
cli          command-line scenario runner
"""

from .core import (
    DESK_DEFAULTS,
    PRESETS,
    STRONG_COUPLING,
    AlphaProfile,
    ClassicalEnsemble1D,
    Gaussian,
    GaussianMixture1D,
    Grid1D,
    Grid2D,
    GridMismatch,
    HybridState,
    ParameterError,
    PhysicalParams,
    quantum_prior,
    validate_params,
)

__version__ = "0.1.0"

__all__ = [
    "DESK_DEFAULTS",
    "PRESETS",
    "STRONG_COUPLING",
    "AlphaProfile",
    "ClassicalEnsemble1D",
    "Gaussian",
    "GaussianMixture1D",
    "Grid1D",
    "Grid2D",
    "GridMismatch",
    "HybridState",
    "ParameterError",
    "PhysicalParams",
    "quantum_prior",
    "validate_params",
]
