"""Finite particle approximations of quasilinear evolution PDEs.

Builds N-particle ODE systems whose interaction kernels are double-mollified
differential operators, integrates them, and verifies the convergence
estimates (Riemann-sum bounds, mollified-operator lemmas, graph-limit error
bounds) against exact and fine-grid reference solutions.
"""

from . import (
    analysis,
    cli,
    errors,
    geometry,
    integral_evolution,
    kernel,
    mollifier,
    particle,
    pde_model,
    reference,
)

__all__ = [
    "analysis",
    "cli",
    "errors",
    "geometry",
    "integral_evolution",
    "kernel",
    "mollifier",
    "particle",
    "pde_model",
    "reference",
]

__version__ = "0.1.0"
