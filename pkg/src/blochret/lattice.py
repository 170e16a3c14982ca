"""Bloch bands of the untilted lattice in a truncated plane-wave basis.

Units throughout: energies in E_rec, quasi-momenta in p_rec = hbar*pi/d_L
(the first Brillouin zone is [-1, 1]), times in hbar/E_rec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal

from .errors import NumericalError

DEFAULT_BASIS_HALFWIDTH = 15
DEFAULT_BZ_POINTS = 512


@dataclass(frozen=True)
class LatticeParams:
    """Dimensionless problem definition.

    ``k0`` is the initial quasi-momentum; ``basis_halfwidth`` N selects plane
    waves -N..N; ``bz_grid_points`` is the size of the uniform grid used for
    Brillouin-zone averages.
    """

    V0: float
    F0: float = 0.0
    k0: float = 0.0
    basis_halfwidth: int = DEFAULT_BASIS_HALFWIDTH
    bz_grid_points: int = DEFAULT_BZ_POINTS

    def __post_init__(self):
        if not self.V0 >= 0:
            raise ValueError(f"V0 must be >= 0, got {self.V0}")
        if not self.F0 >= 0:
            raise ValueError(f"F0 must be >= 0, got {self.F0}")
        if not abs(self.k0) <= 1:
            raise ValueError(f"|k0| must be <= 1, got {self.k0}")
        if int(self.basis_halfwidth) != self.basis_halfwidth or self.basis_halfwidth < 1:
            raise ValueError("basis_halfwidth must be an integer >= 1")
        if int(self.bz_grid_points) != self.bz_grid_points or self.bz_grid_points < 2:
            raise ValueError("bz_grid_points must be an integer >= 2")

    @property
    def dim(self) -> int:
        return 2 * self.basis_halfwidth + 1

    @property
    def plane_wave_indices(self) -> np.ndarray:
        return np.arange(-self.basis_halfwidth, self.basis_halfwidth + 1)


@dataclass(frozen=True)
class BlochSpectrum:
    """Band energies and gauge-fixed eigenvectors on a quasi-momentum grid.

    ``energies[i, a]`` is band ``a`` (0-based, ascending) at ``k_grid[i]``;
    ``eigenvectors[i, :, a]`` is its plane-wave coefficient vector.  The
    Hamiltonian is real symmetric, so the vectors are real.
    """

    k_grid: np.ndarray
    energies: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)

    def band(self, index: int) -> np.ndarray:
        """Energies of band ``index`` (1-based, as in the physics notation)."""
        return self.energies[:, index - 1]


def _tridiagonal(V0: float, k: float, N: int) -> tuple[np.ndarray, np.ndarray]:
    n = np.arange(-N, N + 1)
    return (k + 2.0 * n) ** 2, np.full(2 * N, V0 / 4.0)


def bloch_hamiltonian(params: LatticeParams, k: float) -> np.ndarray:
    """Dense H_k: diagonal (k + 2n)^2, nearest-neighbour coupling V0/4.

    ``k`` may lie outside the first zone.
    """
    d, e = _tridiagonal(params.V0, k, params.basis_halfwidth)
    return np.diag(d) + np.diag(e, 1) + np.diag(e, -1)


def eigensystem(params: LatticeParams, k: float, bands: int | None = None):
    """Ascending eigenvalues and column eigenvectors of H_k."""
    d, e = _tridiagonal(params.V0, k, params.basis_halfwidth)
    select = "a" if bands is None else "i"
    select_range = None if bands is None else (0, bands - 1)
    try:
        return eigh_tridiagonal(d, e, select=select, select_range=select_range)
    except LinAlgError as exc:
        raise NumericalError(f"eigen-solver failed at k={k}: {exc}") from exc


def bz_grid(points: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, points)


def align_gauge(reference: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Rephase each column of ``vectors`` so its overlap with ``reference`` is real-positive."""
    overlap = np.einsum("ij,ij->j", reference.conj(), vectors)
    phase = np.ones_like(overlap)
    nonzero = np.abs(overlap) > 0
    phase[nonzero] = overlap[nonzero].conj() / np.abs(overlap[nonzero])
    if np.isrealobj(vectors):
        phase = phase.real
    return vectors * phase


def band_spectrum(params: LatticeParams) -> BlochSpectrum:
    k_grid = bz_grid(params.bz_grid_points)
    energies = np.empty((k_grid.size, params.dim))
    vectors = np.empty((k_grid.size, params.dim, params.dim))
    for i, k in enumerate(k_grid):
        w, v = eigensystem(params, k)
        if i > 0:
            v = align_gauge(vectors[i - 1], v)
        energies[i], vectors[i] = w, v
    return BlochSpectrum(k_grid=k_grid, energies=energies, eigenvectors=vectors)


def _lowest_pair(V0: float, k: float, N: int) -> np.ndarray:
    d, e = _tridiagonal(V0, k, N)
    return eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, 1))


@lru_cache(maxsize=512)
def _average_gap(V0: float, N: int, points: int) -> float:
    k = bz_grid(points)
    gaps = np.array([np.diff(_lowest_pair(V0, kk, N))[0] for kk in k])
    return float(np.trapezoid(gaps, k) / 2.0)


def average_band_gap(params: LatticeParams) -> float:
    """Brillouin-zone average of eps_2(k) - eps_1(k), trapezoidal rule."""
    return _average_gap(float(params.V0), int(params.basis_halfwidth), int(params.bz_grid_points))


def gap_estimate_small_v(V0: float) -> float:
    """Landau-Zener gap integration, accurate for shallow lattices."""
    if V0 < 0:
        raise ValueError("V0 must be >= 0")
    if V0 == 0:
        return 2.0
    return 0.25 * math.sqrt(64.0 + V0**2) + V0**2 / 32.0 * math.asinh(8.0 / V0)


def gap_estimate_large_v(V0: float) -> float:
    """Harmonic-well estimate sqrt(4 V0) - 1."""
    if V0 <= 0.25:
        raise ValueError(f"harmonic estimate requires V0 > 0.25, got {V0}")
    return math.sqrt(4.0 * V0) - 1.0


def bloch_period(F0: float) -> float:
    if not F0 > 0:
        raise ValueError(f"Bloch period requires F0 > 0, got {F0}")
    return 2.0 * math.pi / F0


def bloch_phase(params: LatticeParams) -> float:
    """Relative band-2/band-1 phase accumulated over one Bloch period."""
    return bloch_period(params.F0) * average_band_gap(params)


def force_for_phase(params: LatticeParams, phi_over_2pi: float) -> float:
    """F0 giving phi/2pi = <dE>/F0 at the lattice depth in ``params``."""
    if not phi_over_2pi > 0:
        raise ValueError("phi_over_2pi must be positive")
    return average_band_gap(params) / phi_over_2pi


def fold_quasi_momentum(k: float) -> tuple[float, int]:
    """Return (k_folded in [-1, 1), m) with k = k_folded + 2 m."""
    m = math.floor((k + 1.0) / 2.0)
    return k - 2.0 * m, m
