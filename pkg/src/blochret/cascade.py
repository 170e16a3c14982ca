"""Two-band cascade model of resonantly enhanced tunneling.

One Bloch period acts on the (band 1, band 2) amplitudes at the zone edge as

    U = [[s12, -p12 s23 e^{i phi}],
         [p12,  s12 s23 e^{i phi}]],      p12 = sqrt(1 - s12^2),

the zone-edge beamsplitter times the lossy phase accumulation in band 2.
Direct iteration of U is the reference; the eigen-expansion and closed forms
for the asymptotic rate gamma and the renormalization Z are checked against it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateModelError
from .lattice import LatticeParams, average_band_gap, bloch_period

DEGENERACY_TOL = 1e-9


def lz_probability(delta_E: float, alpha: float) -> float:
    """Landau-Zener transition probability exp(-pi dE^2 / (4 alpha)), hbar = 1."""
    if not alpha > 0:
        raise ValueError("sweep rate alpha must be positive")
    return math.exp(-math.pi * delta_E**2 / (4.0 * alpha))


def survival_amplitudes(V0: float, F0: float) -> tuple[float, float]:
    """Lowest-order LZ survival amplitudes (s12, s23) for the tilted lattice."""
    if V0 < 0 or not F0 > 0:
        raise ValueError("need V0 >= 0 and F0 > 0")
    s12 = math.sqrt(-math.expm1(-math.pi**2 * V0**2 / (32.0 * F0)))
    s23 = math.sqrt(-math.expm1(-math.pi**2 * V0**4 / (32.0 * 16.0**2 * 2.0 * F0)))
    return s12, s23


@dataclass(frozen=True)
class CascadeModel:
    s12: float
    s23: float
    phi: float
    U: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray  # (e1, e2), |e1| >= |e2|
    eigenvectors: np.ndarray = field(repr=False)  # columns psi1, psi2
    coefficients: np.ndarray = field(repr=False)  # (c1, c2) with |1> = c1 psi1 + c2 psi2
    degenerate: bool = False

    @property
    def p12(self) -> float:
        return math.sqrt(max(0.0, 1.0 - self.s12**2))

    @property
    def e1(self) -> complex:
        return complex(self.eigenvalues[0])

    @property
    def e2(self) -> complex:
        return complex(self.eigenvalues[1])

    @property
    def convergence_ratio(self) -> float:
        """|e2 / e1|: geometric rate at which the transient dies out."""
        return abs(self.e2) / abs(self.e1) if self.e1 != 0 else float("nan")


def _fix_phase(vec: np.ndarray) -> np.ndarray:
    vec = vec / np.linalg.norm(vec)
    first = vec[np.flatnonzero(np.abs(vec) > 1e-15)[0]]
    return vec * (abs(first) / first)


def cascade_operator(s12: float, s23: float, phi: float) -> CascadeModel:
    for name, v in (("s12", s12), ("s23", s23)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    p12 = math.sqrt(max(0.0, 1.0 - s12**2))
    sigma = s23 * np.exp(1j * phi)
    U = np.array([[s12, -p12 * sigma], [p12, s12 * sigma]], dtype=complex)
    U.setflags(write=False)
    w, v = np.linalg.eig(U)
    order = np.argsort(-np.abs(w), kind="stable")
    w, v = w[order], v[:, order]
    scale = max(abs(w[0]), 1e-300)
    degenerate = (abs(w[0]) - abs(w[1])) / scale < DEGENERACY_TOL
    if degenerate:
        coeffs = np.full(2, np.nan + 0j)
    else:
        v = np.column_stack([_fix_phase(v[:, 0]), _fix_phase(v[:, 1])])
        coeffs = np.linalg.solve(v, np.array([1.0, 0.0], dtype=complex))
    return CascadeModel(s12=float(s12), s23=float(s23), phi=float(phi), U=U, eigenvalues=w,
                        eigenvectors=v, coefficients=coeffs, degenerate=bool(degenerate))


def iterate_cascade(model: CascadeModel, n_max: int, protocol: str = "constant_force",
                    halt_probability: float | None = None, rng_seed: int | None = None) -> np.ndarray:
    """P_n = |<1|Phi_n>|^2 for n = 0..n_max by repeated application of U.

    ``protocol`` mirrors the propagator protocols at the model level:
    ``empty_second_band`` drops the band-2 amplitude after every period,
    ``phase_reversal_halt`` flips its sign (an extra relative phase pi), and
    ``randomized_halt`` flips it with probability ``halt_probability``.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    rng = np.random.default_rng(rng_seed) if protocol == "randomized_halt" else None
    state = np.array([1.0, 0.0], dtype=complex)
    P = np.empty(n_max + 1)
    P[0] = 1.0
    for n in range(1, n_max + 1):
        state = model.U @ state
        P[n] = abs(state[0]) ** 2
        if protocol == "empty_second_band":
            state[1] = 0.0
        elif protocol == "phase_reversal_halt":
            state[1] = -state[1]
        elif protocol == "randomized_halt":
            if rng.random() < halt_probability:
                state[1] = -state[1]
        elif protocol != "constant_force":
            raise ValueError(f"unknown protocol {protocol!r}")
    return P


def _require_dominant(model: CascadeModel):
    if model.degenerate:
        raise DegenerateModelError(
            f"|e1| = |e2| at s12={model.s12}, s23={model.s23}, phi={model.phi}; Z is undefined")


def asymptotic_rate(model: CascadeModel) -> float:
    """gamma = -log |e1|^2, per Bloch period."""
    _require_dominant(model)
    return -math.log(abs(model.e1) ** 2)


def z_projection(model: CascadeModel) -> float:
    """Z = |c1|^2 |<1|psi1>|^2."""
    _require_dominant(model)
    return float(abs(model.coefficients[0]) ** 2 * abs(model.eigenvectors[0, 0]) ** 2)


def k_auxiliary(s12: float, s23: float, phi: float) -> float:
    c = math.cos(phi)
    root = math.sqrt(max(0.0,
        s12**4 * (1 + 2 * s23 * c + s23**2) ** 2
        - 8 * s23 * s12**2 * (c + 2 * s23 + s23**2 * c)
        + 16 * s23**2))
    return s12**2 * (1 + 2 * s23 * c + s23**2 * math.cos(2 * phi)) - 4 * s23 * c + root


def z_closed_form(s12: float, s23: float, phi: float, check: bool = True) -> tuple[float, float]:
    """Closed-form (Z, K).

    K equals |D| + Re D with D = (tr U)^2 - 4 det U, and Z = |e1 - s12 s23 e^{i phi}|^2
    / |e1 - e2|^2 written out in real arithmetic.  With ``check`` the result
    is compared with the eigen-decomposition and a mismatch beyond 1e-6
    raises ``ArithmeticError``.
    """
    K = k_auxiliary(s12, s23, phi)
    if not K > 0:
        raise DegenerateModelError(f"K = {K} at s12={s12}, s23={s23}, phi={phi}")
    c, s = math.cos(phi), math.sin(phi)
    B = 2 - s12**2 * (1 + s23 * c)
    num = (s12 / 2 * (1 - s23 * c) + math.sqrt(K / 8)) ** 2 \
        + s23**2 * s**2 * (B / math.sqrt(2 * K) + s12 / 2) ** 2
    den = K / 2 + 2 * s23**2 * s**2 / K * B**2
    Z = num / den
    if check:
        model = cascade_operator(s12, s23, phi)
        if not model.degenerate:
            ref = z_projection(model)
            if abs(Z - ref) > 1e-6:
                raise ArithmeticError(f"closed-form Z={Z} disagrees with projection {ref}")
    return Z, K


def z_first_order(s12: float, s23: float, phi: float) -> float:
    """First-order estimate 1 + 2 s23 (p12/s12)^2 cos(phi)."""
    if s12 == 0:
        raise ValueError("first-order Z needs s12 > 0")
    return 1.0 + 2.0 * s23 * (1.0 - s12**2) / s12**2 * math.cos(phi)


def step_rates(P: Sequence[float]) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if np.any(P <= 0):
        raise ValueError("survival probabilities must be positive")
    return -np.log(P[1:] / P[:-1])


def finite_step_estimates(P: Sequence[float], N: int) -> tuple[float, float]:
    """(Z_N, gamma_N) from the first N+2 survival probabilities."""
    if N < 1:
        raise ValueError("N must be >= 1")
    P = np.asarray(P, dtype=float)
    if P.size < N + 2:
        raise ValueError(f"need P_0..P_{N + 1}, got {P.size} values")
    g = step_rates(P[: N + 2])
    gamma_N = float(g[N])
    return math.exp(N * gamma_N - float(np.sum(g[:N]))), gamma_N


@dataclass(frozen=True)
class ResonancePoint:
    F0: float
    phi: float
    s12: float
    s23: float
    gamma_per_period: float
    Z_closed: float
    Z_projection: float
    Z1: float
    degenerate: bool

    @property
    def phi_over_2pi(self) -> float:
        return self.phi / (2 * math.pi)

    @property
    def gamma_per_time(self) -> float:
        return self.gamma_per_period / bloch_period(self.F0)


RESONANCE_COLUMNS = ("F0", "phi_over_2pi", "s12", "s23", "gamma_per_period", "Z_closed",
                     "Z_projection", "Z1")


def resonance_point(V0: float, F0: float, mean_gap: float) -> ResonancePoint:
    phi = 2 * math.pi * mean_gap / F0
    s12, s23 = survival_amplitudes(V0, F0)
    model = cascade_operator(s12, s23, phi)
    nan = float("nan")
    if model.degenerate:
        return ResonancePoint(F0, phi, s12, s23, nan, nan, nan, z_first_order(s12, s23, phi), True)
    return ResonancePoint(
        F0=F0, phi=phi, s12=s12, s23=s23,
        gamma_per_period=asymptotic_rate(model),
        Z_closed=z_closed_form(s12, s23, phi, check=False)[0],
        Z_projection=z_projection(model),
        Z1=z_first_order(s12, s23, phi) if s12 > 0 else nan,
        degenerate=False,
    )


def resonance_map(V0: float, F0_grid, lattice: LatticeParams | None = None) -> list[ResonancePoint]:
    """(phi, gamma, Z) along a force grid, ordered by increasing phi."""
    lattice = lattice or LatticeParams(V0=V0)
    mean_gap = average_band_gap(LatticeParams(V0=V0, basis_halfwidth=lattice.basis_halfwidth,
                                              bz_grid_points=lattice.bz_grid_points))
    F0s = [float(f) for f in F0_grid]
    if any(not f > 0 for f in F0s):
        raise ValueError("F0 values must be positive")
    points = [resonance_point(V0, f, mean_gap) for f in F0s]
    return sorted(points, key=lambda p: p.phi)


def resonance_rows(points: Sequence[ResonancePoint]):
    for p in sorted(points, key=lambda q: q.F0):
        yield (p.F0, p.phi_over_2pi, p.s12, p.s23, p.gamma_per_period, p.Z_closed,
               p.Z_projection, p.Z1)
