"""Lattice cubes {1..L}^d and their partition into r-sided blocks."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np


class GeometryError(ValueError):
    """Raised for inconsistent (d, L, r) or out-of-range indices."""


@dataclass(frozen=True)
class LatticeGeometry:
    """Cube of side ``L`` in ``d`` dimensions tiled by blocks of side ``r``.

    Sites use 1-based coordinates in {1..L}^d and 0-based row-major linear
    indices (last coordinate varies fastest).  Blocks are indexed row-major
    over the (L/r)^d block grid.
    """

    d: int
    L: int
    r: int = 1

    def __post_init__(self) -> None:
        for name in ("d", "L", "r"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise GeometryError(f"{name} must be a positive integer, got {value!r}")
        if self.L % self.r != 0:
            raise GeometryError("L mod r != 0")

    @property
    def n_sites(self) -> int:
        return self.L**self.d

    @property
    def blocks_per_side(self) -> int:
        return self.L // self.r

    @property
    def n_blocks(self) -> int:
        return self.blocks_per_side**self.d

    @property
    def rank(self) -> int:
        """Rank m = r^d of each block projection."""
        return self.r**self.d

    @cached_property
    def coords(self) -> np.ndarray:
        """(n_sites, d) array of 1-based site coordinates in linear-index order."""
        grids = np.indices((self.L,) * self.d).reshape(self.d, -1).T
        return grids + 1

    @cached_property
    def site_blocks(self) -> np.ndarray:
        """Block index of every site, in linear-index order."""
        block_coords = (self.coords - 1) // self.r
        return np.ravel_multi_index(block_coords.T, (self.blocks_per_side,) * self.d)

    def sub_geometry(self, side: int) -> LatticeGeometry:
        return LatticeGeometry(self.d, side, self.r)


def site_index(geometry: LatticeGeometry, coords: Sequence[int]) -> int:
    """Row-major linear index of the site with 1-based ``coords``."""
    coords = tuple(int(c) for c in coords)
    if len(coords) != geometry.d:
        raise GeometryError(f"expected {geometry.d} coordinates, got {len(coords)}")
    if any(c < 1 or c > geometry.L for c in coords):
        raise GeometryError(f"coordinates {coords} outside {{1..{geometry.L}}}^{geometry.d}")
    return int(np.ravel_multi_index(tuple(c - 1 for c in coords), (geometry.L,) * geometry.d))


def site_coords(geometry: LatticeGeometry, site: int) -> tuple[int, ...]:
    _check_site(geometry, site)
    return tuple(int(c) + 1 for c in np.unravel_index(site, (geometry.L,) * geometry.d))


def block_of_site(geometry: LatticeGeometry, site: int) -> int:
    _check_site(geometry, site)
    return int(geometry.site_blocks[site])


def block_sites(geometry: LatticeGeometry, block: int) -> np.ndarray:
    """Linear indices of the r^d sites in ``block``, ascending."""
    _check_block(geometry, block)
    return np.flatnonzero(geometry.site_blocks == block)


def block_indicator(geometry: LatticeGeometry, block: int) -> np.ndarray:
    """Diagonal 0/1 matrix projecting onto the sites of ``block``."""
    _check_block(geometry, block)
    return np.diag((geometry.site_blocks == block).astype(float))


def block_grid_coords(geometry: LatticeGeometry, block: int) -> tuple[int, ...]:
    """0-based position of ``block`` in the (L/r)^d block grid."""
    _check_block(geometry, block)
    return tuple(int(c) for c in np.unravel_index(block, (geometry.blocks_per_side,) * geometry.d))


def _check_site(geometry: LatticeGeometry, site: int) -> None:
    if not 0 <= site < geometry.n_sites:
        raise GeometryError(f"site {site} outside [0, {geometry.n_sites})")


def _check_block(geometry: LatticeGeometry, block: int) -> None:
    if not 0 <= block < geometry.n_blocks:
        raise GeometryError(f"block {block} outside [0, {geometry.n_blocks})")
