"""Finite-element solver and Monte Carlo rate harness for the 2D stochastic
Navier-Stokes equations on the periodic torus."""

from .mesh import TorusMesh, build_uniform_mesh, mesh_statistics
from .spaces import FeField, FeSpace

__version__ = "0.1.0"

__all__ = [
    "TorusMesh",
    "build_uniform_mesh",
    "mesh_statistics",
    "FeField",
    "FeSpace",
    "__version__",
]
