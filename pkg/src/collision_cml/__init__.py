"""Coupled map lattices with collision interactions: simulation, exact
finite-dimensional measure calculus, Ulam discretization and correlation
statistics."""
from ._accel import BACKEND
from .lattice import CollisionSpec, LatticeGeometry
from .local_map import PiecewiseAffineMap, decimal_map, doubling_map

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CollisionSpec",
    "LatticeGeometry",
    "PiecewiseAffineMap",
    "decimal_map",
    "doubling_map",
]
