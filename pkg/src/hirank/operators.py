"""Lattice Laplacians, block potentials and finite-volume Hamiltonians.

All matrices are dense real symmetric ``numpy`` arrays indexed by the linear
site order of :class:`~hirank.lattice.LatticeGeometry`.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np

from hirank.lattice import GeometryError, LatticeGeometry


class BoundaryCondition(str, enum.Enum):
    SIMPLE = "simple"
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"

    @classmethod
    def parse(cls, value: "BoundaryCondition | str") -> "BoundaryCondition":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown boundary condition {value!r}") from None


@dataclass(frozen=True)
class Configuration:
    """Block couplings omega_k, one per block of ``geometry``.

    Sampled configurations lie in [0, 1]; shifted or scaled ones (used for
    covariance checks and change-of-variable experiments) may leave it, so
    only finiteness is enforced here.
    """

    geometry: LatticeGeometry
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != self.geometry.n_blocks:
            raise ValueError(f"expected {self.geometry.n_blocks} block values, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("configuration values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, geometry: LatticeGeometry, value: float) -> "Configuration":
        return cls(geometry, np.full(geometry.n_blocks, float(value)))

    @property
    def in_support(self) -> bool:
        return bool(np.all((self.values >= 0.0) & (self.values <= 1.0)))

    def replace(self, block: int, value: float) -> "Configuration":
        values = self.values.copy()
        values[block] = value
        return Configuration(self.geometry, values)

    def restrict(self, origin: tuple[int, ...], side: int) -> "Configuration":
        """Configuration of the sub-cube of ``side`` sites whose first site has
        0-based coordinates ``origin``; both must be block aligned."""
        g = self.geometry
        r = g.r
        if side % r or any(o % r for o in origin):
            raise GeometryError("sub-cube must be aligned with the block grid")
        grid = self.values.reshape((g.blocks_per_side,) * g.d)
        sl = tuple(slice(o // r, o // r + side // r) for o in origin)
        return Configuration(g.sub_geometry(side), grid[sl].reshape(-1))


def _neighbor_pairs(geometry: LatticeGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Unordered nearest-neighbor pairs (i, j), i < j, inside the cube."""
    L, d = geometry.L, geometry.d
    coords = geometry.coords
    sites = np.arange(geometry.n_sites)
    left, right = [], []
    for axis in range(d):
        stride = L ** (d - 1 - axis)
        mask = coords[:, axis] < L
        left.append(sites[mask])
        right.append(sites[mask] + stride)
    return np.concatenate(left), np.concatenate(right)


def outside_neighbor_count(geometry: LatticeGeometry) -> np.ndarray:
    """Diagonal of m_Lambda: neighbors in Z^d that fall outside the cube."""
    i, j = _neighbor_pairs(geometry)
    inside = np.bincount(i, minlength=geometry.n_sites) + np.bincount(j, minlength=geometry.n_sites)
    return 2 * geometry.d - inside


def _assemble(n: int, d: int, i: np.ndarray, j: np.ndarray, m: np.ndarray, bc: BoundaryCondition) -> np.ndarray:
    H = np.zeros((n, n))
    H[i, j] = -1.0
    H[j, i] = -1.0
    diag = np.full(n, 2.0 * d)
    if bc is BoundaryCondition.DIRICHLET:
        diag += m
    elif bc is BoundaryCondition.NEUMANN:
        diag -= m
    H[np.diag_indices(n)] = diag
    return H


def laplacian(geometry: LatticeGeometry, bc: BoundaryCondition | str = BoundaryCondition.SIMPLE) -> np.ndarray:
    """Positive lattice Laplacian restricted to the cube.

    Simple: 2d on the diagonal and -1 between inside neighbors.  Dirichlet adds
    the outside-neighbor count m_Lambda to the diagonal, Neumann subtracts it.
    """
    bc = BoundaryCondition.parse(bc)
    i, j = _neighbor_pairs(geometry)
    return _assemble(geometry.n_sites, geometry.d, i, j, outside_neighbor_count(geometry), bc)


def block_direct_sum_laplacian(geometry: LatticeGeometry, bc: BoundaryCondition | str) -> np.ndarray:
    """Direct sum over blocks of the r-sided Laplacian with the given bc."""
    bc = BoundaryCondition.parse(bc)
    if bc is BoundaryCondition.SIMPLE:
        raise ValueError("block direct sum is defined for Dirichlet or Neumann only")
    i, j = _neighbor_pairs(geometry)
    blocks = geometry.site_blocks
    same = blocks[i] == blocks[j]
    i, j = i[same], j[same]
    n = geometry.n_sites
    inside = np.bincount(i, minlength=n) + np.bincount(j, minlength=n)
    return _assemble(n, geometry.d, i, j, 2 * geometry.d - inside, bc)


def analytic_bc_spectrum(geometry: LatticeGeometry, bc: BoundaryCondition | str) -> np.ndarray:
    """Closed-form sorted spectrum 2d - 2 sum_i cos(pi n_i / L).

    Dirichlet uses n_i in {1..L}, Neumann m_i in {0..L-1}.
    """
    bc = BoundaryCondition.parse(bc)
    L, d = geometry.L, geometry.d
    if bc is BoundaryCondition.DIRICHLET:
        modes = np.arange(1, L + 1)
    elif bc is BoundaryCondition.NEUMANN:
        modes = np.arange(0, L)
    else:
        raise ValueError("no closed-form spectrum for simple boundary conditions")
    one_d = -2.0 * np.cos(np.pi * modes / L)
    total = np.zeros(1)
    for _ in range(d):
        total = np.add.outer(total, one_d).reshape(-1)
    return np.sort(2.0 * d + total)


def analytic_bc_eigenvectors(geometry: LatticeGeometry, bc: BoundaryCondition | str) -> list[tuple[float, np.ndarray]]:
    """(eigenvalue, unnormalised eigenvector) pairs from the product sine/cosine modes."""
    bc = BoundaryCondition.parse(bc)
    L, d = geometry.L, geometry.d
    k = geometry.coords - 0.5
    if bc is BoundaryCondition.DIRICHLET:
        modes, fn = range(1, L + 1), np.sin
    elif bc is BoundaryCondition.NEUMANN:
        modes, fn = range(0, L), np.cos
    else:
        raise ValueError("no closed-form eigenvectors for simple boundary conditions")
    out = []
    for ns in itertools.product(modes, repeat=d):
        ns_arr = np.asarray(ns, dtype=float)
        vec = np.prod(fn(np.pi * ns_arr / L * k), axis=1)
        value = 2.0 * d - 2.0 * np.sum(np.cos(np.pi * ns_arr / L))
        out.append((float(value), vec))
    return out


def neumann_second_eigenvalue_gap(r: int) -> float:
    """gamma_r = 2(1 - cos(pi/r)), the first nonzero Neumann eigenvalue on a block."""
    if r < 2:
        raise ValueError("gamma_r needs block side r >= 2")
    return 2.0 * (1.0 - np.cos(np.pi / r))


def potential(configuration: Configuration) -> np.ndarray:
    """Diagonal block potential: site s carries omega of its block."""
    g = configuration.geometry
    return np.diag(configuration.values[g.site_blocks])


def hamiltonian(configuration: Configuration, bc: BoundaryCondition | str = BoundaryCondition.SIMPLE) -> np.ndarray:
    H = laplacian(configuration.geometry, bc)
    g = configuration.geometry
    H[np.diag_indices(g.n_sites)] += configuration.values[g.site_blocks]
    return H


def deformed_hamiltonian(configuration: Configuration, kappa: float) -> np.ndarray:
    """kappa * H0 + V (simple bc), i.e. H - (1 - kappa) H0."""
    if not 0.0 < kappa <= 1.0:
        raise ValueError("kappa must lie in (0, 1]")
    g = configuration.geometry
    H = kappa * laplacian(g, BoundaryCondition.SIMPLE)
    H[np.diag_indices(g.n_sites)] += configuration.values[g.site_blocks]
    return H
