"""Finsler gamma-Laplacian laboratory: Banach-space norms, a grid solver
for the vector-valued gamma-Laplacian and Besov regularity probes."""

from . import besov, geometry, grid, problems, solver, tensor

__all__ = ["besov", "geometry", "grid", "problems", "solver", "tensor"]
__version__ = "0.1.0"
