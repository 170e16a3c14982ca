"""Exact propagation of a band-1 Bloch state in the tilted lattice.

The state lives in the fixed-quasi-momentum plane-wave basis; the force only
shifts the kinetic diagonal, k(t) = k0 + F0 t / pi.  After every Bloch period
the quasi-momentum has advanced by one reciprocal lattice vector (2 in p_rec
units) and the amplitudes are relabelled so k returns to k0.  Amplitude pushed
past the top plane wave by that relabelling is discarded: it belongs to the
free continuum and never returns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import GaugeError, IntegratorError
from .io import write_csv
from .lattice import (
    LatticeParams,
    align_gauge,
    bloch_hamiltonian,
    bloch_period,
    eigensystem,
    fold_quasi_momentum,
)

DEFAULT_STEPS_PER_PERIOD = 4096
NORM_TOLERANCE = 1e-8
MAX_HALVINGS = 4

PROTOCOL_KINDS = ("constant_force", "phase_reversal_halt", "randomized_halt", "empty_second_band")
TRAJECTORY_COLUMNS = ("time", "time_over_TB", "P_band1", "P_band2", "P_rest", "norm")

_GAUSS_OFFSET = math.sqrt(3.0) / 6.0


@dataclass
class WavePacketState:
    amplitudes: np.ndarray
    time: float
    quasi_momentum: float

    @property
    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


@dataclass(frozen=True)
class Protocol:
    kind: str = "constant_force"
    halt_probability: float | None = None
    rng_seed: int | None = None

    def __post_init__(self):
        if self.kind not in PROTOCOL_KINDS:
            raise ValueError(f"unknown protocol {self.kind!r}; expected one of {PROTOCOL_KINDS}")
        if self.kind == "randomized_halt":
            if self.halt_probability is None:
                raise ValueError("randomized_halt requires halt_probability")
            if not 0.0 <= self.halt_probability <= 1.0:
                raise ValueError("halt_probability must lie in [0, 1]")
        elif self.halt_probability is not None:
            raise ValueError("halt_probability is only meaningful for randomized_halt")

    def as_dict(self) -> dict:
        return {"kind": self.kind, "halt_probability": self.halt_probability,
                "rng_seed": self.rng_seed}


@dataclass
class Trajectory:
    """Sampled adiabatic band populations.

    ``sample_times`` count only the accelerated evolution; halt intervals of
    the phase-reversal protocols are excluded (see ``metadata['halt_time']``).
    ``band_populations[i, a]`` is the population of band a+1.
    """

    sample_times: np.ndarray
    band_populations: np.ndarray
    norm_series: np.ndarray
    bloch_period: float
    metadata: dict = field(default_factory=dict)

    @property
    def survival_series(self) -> np.ndarray:
        return self.band_populations[:, 0]

    @property
    def time_over_TB(self) -> np.ndarray:
        return self.sample_times / self.bloch_period

    def rows(self):
        pops = self.band_populations
        rest = self.norm_series - pops[:, 0] - pops[:, 1]
        for i, t in enumerate(self.sample_times):
            yield (t, t / self.bloch_period, pops[i, 0], pops[i, 1], rest[i], self.norm_series[i])

    def to_csv(self, path):
        return write_csv(path, TRAJECTORY_COLUMNS, self.rows())


# -- integrator ---------------------------------------------------------------


def _magnus_steps(V0, F0, k0, N, t_start, dt, count) -> np.ndarray:
    """Fourth-order Magnus propagators for ``count`` consecutive steps."""
    n = np.arange(-N, N + 1)
    j = np.arange(count)[:, None]
    rate = F0 / math.pi
    t1 = t_start + (j + 0.5 - _GAUSS_OFFSET) * dt
    t2 = t_start + (j + 0.5 + _GAUSS_OFFSET) * dt
    d1 = (k0 + rate * t1 + 2.0 * n) ** 2
    d2 = (k0 + rate * t2 + 2.0 * n) ** 2
    delta = d2 - d1
    dim = n.size
    # K = dt/2 (H1 + H2) - i sqrt(3) dt^2 / 12 [H2, H1]; the commutator of the
    # diagonal difference with the constant V0/4 coupling is tridiagonal
    K = np.zeros((count, dim, dim), dtype=complex)
    idx = np.arange(dim)
    K[:, idx, idx] = 0.5 * dt * (d1 + d2)
    coupling = V0 / 4.0
    off = dt * coupling - 1j * (math.sqrt(3.0) * dt**2 / 12.0) * (delta[:, :-1] - delta[:, 1:]) * coupling
    K[:, idx[:-1], idx[1:]] = off
    K[:, idx[1:], idx[:-1]] = off.conj()
    w, v = np.linalg.eigh(K)
    return (v * np.exp(-1j * w)[:, None, :]) @ v.conj().transpose(0, 2, 1)


def _ordered_product(mats: np.ndarray) -> np.ndarray:
    """Time-ordered product along axis -3: M[L-1] @ ... @ M[0]."""
    while mats.shape[-3] > 1:
        length = mats.shape[-3]
        paired = mats[..., 1:length - length % 2:2, :, :] @ mats[..., 0:length - length % 2:2, :, :]
        if length % 2:
            paired = np.concatenate([paired, mats[..., -1:, :, :]], axis=-3)
        mats = paired
    return mats[..., 0, :, :]


@lru_cache(maxsize=128)
def _period_propagators(V0: float, F0: float, k0: float, N: int, steps: int,
                        samples: int) -> np.ndarray:
    """Cumulative propagators from the period start to each of ``samples``+1 instants."""
    per_sample = steps // samples
    dt = bloch_period(F0) / steps
    dim = 2 * N + 1
    blocks_per_chunk = max(1, 1024 // per_sample)
    snaps = np.empty((samples + 1, dim, dim), dtype=complex)
    snaps[0] = np.eye(dim)
    s = 0
    while s < samples:
        nb = min(blocks_per_chunk, samples - s)
        steps_here = _magnus_steps(V0, F0, k0, N, s * per_sample * dt, dt, nb * per_sample)
        blocks = _ordered_product(steps_here.reshape(nb, per_sample, dim, dim))
        for b in range(nb):
            snaps[s + 1] = blocks[b] @ snaps[s]
            s += 1
    snaps.setflags(write=False)
    return snaps


def _unitarity_defect(u: np.ndarray) -> float:
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


def period_propagators(params: LatticeParams, samples_per_period: int,
                       steps_per_period: int = DEFAULT_STEPS_PER_PERIOD) -> tuple[np.ndarray, int]:
    """Sampled one-period propagators, halving the step until unitarity holds."""
    steps = -(-steps_per_period // samples_per_period) * samples_per_period
    for _ in range(MAX_HALVINGS + 1):
        snaps = _period_propagators(float(params.V0), float(params.F0), float(params.k0),
                                    int(params.basis_halfwidth), steps, samples_per_period)
        if _unitarity_defect(snaps[-1]) < NORM_TOLERANCE:
            return snaps, steps
        steps *= 2
    raise IntegratorError(f"norm drift above {NORM_TOLERANCE} at {steps // 2} steps per period")


# -- adiabatic basis ----------------------------------------------------------


def _shift(amplitudes: np.ndarray, m: int) -> tuple[np.ndarray, float]:
    """Relabel plane waves n -> n + m, returning the discarded weight."""
    if m == 0:
        return amplitudes, 0.0
    out = np.zeros_like(amplitudes)
    if m > 0:
        out[m:] = amplitudes[:-m]
        lost = amplitudes[-m:]
    else:
        out[:m] = amplitudes[-m:]
        lost = amplitudes[:-m]
    return out, float(np.vdot(lost, lost).real)


def folded(state: WavePacketState) -> WavePacketState:
    """Same state with its quasi-momentum folded into [-1, 1)."""
    k, m = fold_quasi_momentum(state.quasi_momentum)
    amps, _ = _shift(state.amplitudes, m)
    return WavePacketState(amps, state.time, k)


def adiabatic_populations(state: WavePacketState, params: LatticeParams) -> np.ndarray:
    if state.amplitudes.shape != (params.dim,):
        raise ValueError("state and params disagree on the basis size")
    f = folded(state)
    _, v = eigensystem(params, f.quasi_momentum)
    return np.abs(v.T @ f.amplitudes) ** 2


def band1_state(params: LatticeParams, k: float | None = None) -> WavePacketState:
    k = params.k0 if k is None else k
    _, v = eigensystem(params, k, bands=1)
    return WavePacketState(v[:, 0].astype(complex), 0.0, k)


# -- protocols ----------------------------------------------------------------


def halt_duration(params: LatticeParams, k: float) -> float:
    """t_halt = pi / dE(k): imprints a relative phase pi between bands 1 and 2."""
    w, _ = eigensystem(params, fold_quasi_momentum(k)[0], bands=2)
    return math.pi / (w[1] - w[0])


def _halt(state: WavePacketState, params: LatticeParams) -> WavePacketState:
    f = folded(state)
    w, v = eigensystem(params, f.quasi_momentum)
    t_halt = math.pi / (w[1] - w[0])
    amps = v @ (np.exp(-1j * w * t_halt) * (v.T @ f.amplitudes))
    return WavePacketState(amps, state.time, f.quasi_momentum)


def apply_protocol_action(state: WavePacketState, params: LatticeParams, protocol: Protocol,
                          period_index: int, rng: np.random.Generator | None = None) -> WavePacketState:
    """Act on the state at t = period_index * T_B."""
    TB = bloch_period(params.F0)
    if abs(state.time - period_index * TB) > 1e-9 * max(1.0, state.time):
        raise ValueError(f"protocol action requested at t={state.time}, not at {period_index} T_B")
    kind = protocol.kind
    if kind == "constant_force":
        return state
    if kind == "phase_reversal_halt":
        return _halt(state, params)
    if kind == "randomized_halt":
        if rng is None:
            raise ValueError("randomized_halt needs the trajectory's random generator")
        if rng.random() < protocol.halt_probability:
            return _halt(state, params)
        return state
    # empty_second_band: keep only the band-1 component
    f = folded(state)
    _, v = eigensystem(params, f.quasi_momentum, bands=1)
    v1 = v[:, 0]
    return WavePacketState(v1 * (v1 @ f.amplitudes), state.time, f.quasi_momentum)


# -- evolution ----------------------------------------------------------------


def evolve(params: LatticeParams, protocol: Protocol | None = None, n_bloch_periods: int = 5,
           samples_per_period: int = 64,
           steps_per_period: int = DEFAULT_STEPS_PER_PERIOD) -> Trajectory:
    """Integrate from the band-1 eigenstate at k0 and sample band populations.

    Samples fall at t = (p + s / samples_per_period) T_B and a final one at
    n_bloch_periods * T_B; samples at integer periods follow the protocol
    action taken there.
    """
    protocol = protocol or Protocol()
    if samples_per_period < 2:
        raise ValueError("samples_per_period must be >= 2")
    if n_bloch_periods < 1:
        raise ValueError("n_bloch_periods must be >= 1")
    TB = bloch_period(params.F0)
    snaps, steps = period_propagators(params, samples_per_period, steps_per_period)

    # adiabatic bases at the sample quasi-momenta, with their fold shifts
    bases = []
    for s in range(samples_per_period):
        k_f, m = fold_quasi_momentum(params.k0 + 2.0 * s / samples_per_period)
        bases.append((eigensystem(params, k_f)[1], m))

    rng = np.random.default_rng(protocol.rng_seed) if protocol.kind == "randomized_halt" else None
    state = band1_state(params)
    a = state.amplitudes
    n_samples = n_bloch_periods * samples_per_period + 1
    times = np.empty(n_samples)
    pops = np.empty((n_samples, params.dim))
    norms = np.empty(n_samples)
    edge_loss = emptied = halt_time = 0.0
    halts = []
    t_halt = halt_duration(params, params.k0)

    i = 0
    for p in range(n_bloch_periods):
        for s in range(samples_per_period):
            b = snaps[s] @ a
            v, m = bases[s]
            b_f, _ = _shift(b, m)
            times[i] = (p + s / samples_per_period) * TB
            pops[i] = np.abs(v.T @ b_f) ** 2
            norms[i] = np.vdot(b, b).real
            i += 1
        before = np.vdot(a, a).real
        a = snaps[-1] @ a
        drift = abs(np.vdot(a, a).real - before)
        if drift > NORM_TOLERANCE:
            raise IntegratorError(f"norm drift {drift:.3g} in period {p}")
        a, lost = _shift(a, 1)
        edge_loss += lost
        state = WavePacketState(a, (p + 1) * TB, params.k0)
        new = apply_protocol_action(state, params, protocol, p + 1, rng)
        if new is not state:
            if protocol.kind == "empty_second_band":
                emptied += state.norm - new.norm
            else:
                halts.append(p + 1)
                halt_time += t_halt
        a = new.amplitudes
    times[i] = n_bloch_periods * TB
    pops[i] = np.abs(bases[0][0].T @ _shift(a, bases[0][1])[0]) ** 2
    norms[i] = np.vdot(a, a).real

    metadata = {
        "protocol": protocol.as_dict(),
        "steps_per_period": steps,
        "halted_periods": halts,
        "halt_time": halt_time,
        "edge_loss": edge_loss,
        "emptied_norm": emptied,
    }
    return Trajectory(times, pops, norms, TB, metadata)


# -- adiabatic coupling -------------------------------------------------------


def lattice_crossing(params: LatticeParams) -> tuple[float, float, float]:
    """Two-level Landau-Zener data of the zone-edge crossing.

    Returns (gap, sweep_rate, t_center): the gap V0/2, the rate alpha of the
    two-level form (diabatic levels +-alpha t, i.e. half the rate 4 dk/dt at
    which k^2 and (k-2)^2 separate), and the first time k(t) reaches 1.
    """
    rate = params.F0 / math.pi
    return params.V0 / 2.0, 2.0 * rate, (1.0 - params.k0) / rate


def lz_coupling_lorentzian(gap: float, sweep_rate: float, t_grid, t_center: float) -> np.ndarray:
    """<1|d/dt|2> of the two-level Landau-Zener model: (w/2) / (w^2 + (t - t_c)^2)."""
    if not gap > 0 or not sweep_rate > 0:
        raise ValueError("gap and sweep_rate must be positive")
    w = gap / (2.0 * sweep_rate)
    t = np.asarray(t_grid, dtype=float) - t_center
    return 0.5 * w / (w**2 + t**2)


def adiabatic_coupling(params: LatticeParams, t_grid, normalize: bool = False,
                       fd_step: float | None = None) -> np.ndarray:
    """c(t) = <1(t)| d/dt |2(t)> by central differences of transported eigenvectors."""
    TB = bloch_period(params.F0)
    rate = params.F0 / math.pi
    h = fd_step if fd_step is not None else 1e-5 * TB

    def pair(t):
        return eigensystem(params, params.k0 + rate * t, bands=2)[1]

    out = []
    prev = None
    for t in np.asarray(t_grid, dtype=float):
        v = pair(t)
        if prev is not None:
            if np.min(np.abs(np.einsum("ij,ij->j", prev, v))) < 1e-8:
                raise GaugeError(f"vanishing overlap along the grid at t={t}")
            v = align_gauge(prev, v)
        plus, minus = pair(t + h), pair(t - h)
        for other in (plus, minus):
            if np.min(np.abs(np.einsum("ij,ij->j", v, other))) < 0.5:
                raise GaugeError(f"finite-difference step too coarse at t={t}")
        plus, minus = align_gauge(v, plus), align_gauge(v, minus)
        out.append(v[:, 0] @ (plus[:, 1] - minus[:, 1]) / (2.0 * h))
        prev = v
    c = np.array(out)
    if normalize:
        c = c / np.max(np.abs(c))
    return c


def coupling_half_width(t_grid, c) -> float:
    """Half width at half maximum of |c| around its peak (linear interpolation)."""
    t = np.asarray(t_grid, dtype=float)
    y = np.abs(np.asarray(c))
    i = int(np.argmax(y))
    half = 0.5 * y[i]

    def crossing(indices):
        for j0, j1 in zip(indices[:-1], indices[1:]):
            if y[j1] <= half:
                frac = (y[j0] - half) / (y[j0] - y[j1])
                return abs(t[j0] + frac * (t[j1] - t[j0]) - t[i])
        return None

    right = crossing(list(range(i, t.size)))
    left = crossing(list(range(i, -1, -1)))
    widths = [w for w in (left, right) if w is not None]
    if not widths:
        raise ValueError("coupling never falls to half maximum on this grid")
    return float(np.mean(widths))


def hamiltonian_at(params: LatticeParams, t: float) -> np.ndarray:
    return bloch_hamiltonian(params, params.k0 + params.F0 * t / math.pi)
