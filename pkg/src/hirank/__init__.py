"""Numerical laboratory for higher-rank (block) Anderson Hamiltonians.

Finite-volume block Anderson operators on lattice cubes, their spectra and
level-spacing functionals, Monte Carlo estimators for Wegner/Minami-type
probabilities, a constructive degeneracy-splitting search, and local
eigenvalue statistics.
"""

from hirank.lattice import LatticeGeometry
from hirank.operators import BoundaryCondition, Configuration
from hirank.randomness import Density, SeedSpec
from hirank.spectral import IntervalSet, Spectrum

__all__ = [
    "BoundaryCondition",
    "Configuration",
    "Density",
    "IntervalSet",
    "LatticeGeometry",
    "SeedSpec",
    "Spectrum",
]

__version__ = "0.1.0"
