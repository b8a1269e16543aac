"""Spectral Galerkin simulation and hypothesis certification for stochastic
heat-type equations on evolving one-dimensional manifolds."""

__version__ = "0.1.0"

from . import basis, cli, geometry, noise, operators, solver, verify

__all__ = ["basis", "cli", "geometry", "noise", "operators", "solver", "verify", "__version__"]
