"""Eigensolving and spectral functionals: counts, level spacing, discriminant,
cluster isolation, spectral projections and Feynman-Hellmann sensitivities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from hirank.lattice import block_sites
from hirank.operators import BoundaryCondition, Configuration, hamiltonian

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class Spectrum:
    """Ascending eigenvalues with multiplicity; column j of ``eigenvectors``
    pairs with ``eigenvalues[j]``."""

    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.eigenvalues)

    def shifted(self, c: float) -> "Spectrum":
        return Spectrum(self.eigenvalues + c, self.eigenvectors)

    def residuals(self, matrix: np.ndarray) -> np.ndarray:
        """Per-eigenpair ||A v - lambda v|| / (1 + |lambda|)."""
        if self.eigenvectors is None:
            raise ValueError("spectrum carries no eigenvectors")
        V = self.eigenvectors
        R = matrix @ V - V * self.eigenvalues
        return np.linalg.norm(R, axis=0) / (1.0 + np.abs(self.eigenvalues))

    def to_csv(self) -> str:
        return "".join(f"{x:.17g}\n" for x in self.eigenvalues)


SpectrumLike = Union[Spectrum, np.ndarray, Iterable[float]]


def _values(spectrum: SpectrumLike) -> np.ndarray:
    if isinstance(spectrum, Spectrum):
        return spectrum.eigenvalues
    return np.sort(np.asarray(spectrum, dtype=float).reshape(-1))


@dataclass(frozen=True)
class IntervalSet:
    """Finite union of disjoint closed intervals, stored sorted."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        ivs = tuple(sorted((float(a), float(b)) for a, b in self.intervals))
        for a, b in ivs:
            if not a <= b:
                raise ValueError(f"interval [{a}, {b}] has a > b")
        for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
            if a1 <= b0:
                raise ValueError("intervals must be pairwise disjoint")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def single(cls, a: float, b: float) -> "IntervalSet":
        return cls(((a, b),))

    @classmethod
    def band_edges(cls, E: float, d: int) -> "IntervalSet":
        """I_E = [0, E] u [4d+1-E, 4d+1]."""
        top = 4.0 * d + 1.0
        if E <= 0 or 2 * E >= top:
            raise ValueError("band-edge window needs 0 < E < (4d+1)/2")
        return cls(((0.0, E), (top - E, top)))

    @classmethod
    def centered(cls, center: float, width: float) -> "IntervalSet":
        return cls.single(center - width / 2.0, center + width / 2.0)

    @property
    def length(self) -> float:
        return sum(b - a for a, b in self.intervals)

    @property
    def hull(self) -> tuple[float, float]:
        return self.intervals[0][0], self.intervals[-1][1]

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        mask = np.zeros(x.shape, dtype=bool)
        for a, b in self.intervals:
            mask |= (x >= a) & (x <= b)
        return mask

    def distance(self, x) -> np.ndarray:
        """Distance from each point to the set (0 inside)."""
        x = np.asarray(x, dtype=float)
        dist = np.full(x.shape, np.inf)
        for a, b in self.intervals:
            dist = np.minimum(dist, np.maximum(0.0, np.maximum(a - x, x - b)))
        return dist

    def shift(self, c: float) -> "IntervalSet":
        return IntervalSet(tuple((a + c, b + c) for a, b in self.intervals))

    def widen(self, eps: float) -> "IntervalSet":
        """I + [-eps, eps], merging intervals that come to overlap."""
        merged: list[list[float]] = []
        for a, b in self.intervals:
            a, b = a - eps, b + eps
            if merged and a <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        return IntervalSet(tuple((a, b) for a, b in merged))

    def is_subset_of(self, other: "IntervalSet") -> bool:
        return all(any(c <= a and b <= e for c, e in other.intervals) for a, b in self.intervals)

    def to_list(self) -> list[list[float]]:
        return [[a, b] for a, b in self.intervals]


@dataclass(frozen=True)
class ClusterReport:
    n: int
    gap_to_rest: float
    mean: Optional[float]


def eigensolve(matrix: np.ndarray, want_vectors: bool = False) -> Spectrum:
    """Full spectrum of a real symmetric matrix (LAPACK ``syevd``)."""
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if A.size and np.max(np.abs(A - A.T)) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")
    if want_vectors:
        w, V = np.linalg.eigh(A)
        return Spectrum(w, V)
    return Spectrum(np.linalg.eigvalsh(A))


def in_set(spectrum: SpectrumLike, intervals: IntervalSet) -> np.ndarray:
    values = _values(spectrum)
    return values[intervals.contains(values)]


def count_in(spectrum: SpectrumLike, intervals: IntervalSet) -> int:
    """Number of eigenvalues, with multiplicity, in the closed interval set."""
    return int(np.count_nonzero(intervals.contains(_values(spectrum))))


def spac(spectrum: SpectrumLike, intervals: IntervalSet) -> float:
    """Minimal distance between two distinct-index eigenvalues in the set;
    +inf with fewer than two."""
    inside = in_set(spectrum, intervals)
    if inside.size < 2:
        return math.inf
    return float(np.min(np.diff(inside)))


def disc(spectrum: SpectrumLike, intervals: IntervalSet) -> float:
    """Product of squared pairwise differences of in-set eigenvalues (1 if n <= 1)."""
    inside = in_set(spectrum, intervals)
    diffs = inside[:, None] - inside[None, :]
    upper = diffs[np.triu_indices(inside.size, k=1)]
    return float(np.prod(upper * upper))


def cluster_report(spectrum: SpectrumLike, intervals: IntervalSet) -> ClusterReport:
    values = _values(spectrum)
    mask = intervals.contains(values)
    n = int(np.count_nonzero(mask))
    outside = values[~mask]
    gap = float(np.min(intervals.distance(outside))) if outside.size else math.inf
    mean = float(np.mean(values[mask])) if n else None
    return ClusterReport(n=n, gap_to_rest=gap, mean=mean)


def spectral_projection(spectrum: Spectrum, intervals: IntervalSet) -> np.ndarray:
    """Orthogonal projection onto the eigenvectors whose eigenvalues lie in the set."""
    if spectrum.eigenvectors is None:
        raise ValueError("spectral projection needs eigenvectors")
    V = spectrum.eigenvectors[:, intervals.contains(spectrum.eigenvalues)]
    return V @ V.T


def cluster_vectors(spectrum: Spectrum, intervals: IntervalSet) -> np.ndarray:
    if spectrum.eigenvectors is None:
        raise ValueError("cluster vectors need eigenvectors")
    return spectrum.eigenvectors[:, intervals.contains(spectrum.eigenvalues)]


def block_weights(configuration: Configuration, vectors: np.ndarray) -> np.ndarray:
    """(n_blocks, n_vectors) array of sum_{s in block} v(s)^2."""
    g = configuration.geometry
    sq = vectors * vectors
    out = np.zeros((g.n_blocks, vectors.shape[1]))
    np.add.at(out, g.site_blocks, sq)
    return out


def feynman_hellmann_alphas(
    configuration: Configuration,
    intervals: IntervalSet,
    bc: BoundaryCondition | str = BoundaryCondition.SIMPLE,
) -> np.ndarray:
    """alpha_k = tr(P chi_k P) / n for every block k, P the cluster projection.

    Equals the derivative of the cluster mean energy in omega_k.
    """
    spectrum = eigensolve(hamiltonian(configuration, bc), want_vectors=True)
    V = cluster_vectors(spectrum, intervals)
    n = V.shape[1]
    if n == 0:
        raise ValueError("no eigenvalue in the interval set")
    return block_weights(configuration, V).sum(axis=1) / n


def feynman_hellmann_alpha(
    configuration: Configuration,
    intervals: IntervalSet,
    block: int,
    bc: BoundaryCondition | str = BoundaryCondition.SIMPLE,
) -> float:
    block_sites(configuration.geometry, block)  # range check
    return float(feynman_hellmann_alphas(configuration, intervals, bc)[block])


def cluster_mean(
    configuration: Configuration,
    intervals: IntervalSet,
    bc: BoundaryCondition | str = BoundaryCondition.SIMPLE,
) -> float:
    report = cluster_report(eigensolve(hamiltonian(configuration, bc)), intervals)
    if report.mean is None:
        raise ValueError("no eigenvalue in the interval set")
    return report.mean


def weyl_rank_m_check(
    configuration: Configuration,
    block: int,
    new_value: float,
    intervals: IntervalSet,
    bc: BoundaryCondition | str = BoundaryCondition.SIMPLE,
) -> int:
    """|change in eigenvalue count| when one block coupling is replaced.

    A rank-m perturbation can move at most m = r^d eigenvalues across the set.
    """
    before = count_in(eigensolve(hamiltonian(configuration, bc)), intervals)
    after = count_in(eigensolve(hamiltonian(configuration.replace(block, new_value), bc)), intervals)
    return abs(before - after)
