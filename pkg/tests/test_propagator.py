from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from blochret.cascade import survival_amplitudes
from blochret.errors import IntegratorError
from blochret.lattice import LatticeParams, average_band_gap, bloch_period, eigensystem
from blochret.propagator import (
    TRAJECTORY_COLUMNS,
    Protocol,
    WavePacketState,
    adiabatic_coupling,
    adiabatic_populations,
    apply_protocol_action,
    band1_state,
    coupling_half_width,
    evolve,
    hamiltonian_at,
    lattice_crossing,
    lz_coupling_lorentzian,
    period_propagators,
)


def phase_params(V0, phi_over_2pi, k0=0.0, **kw):
    gap = average_band_gap(LatticeParams(V0=V0))
    return LatticeParams(V0=V0, F0=gap / phi_over_2pi, k0=k0, **kw)


@pytest.fixture(scope="module")
def plateau_run():
    return evolve(phase_params(1.5, 2.0, k0=0.2), n_bloch_periods=3, samples_per_period=32)


def test_magnus_matches_adaptive_runge_kutta():
    p = LatticeParams(V0=1.5, F0=1.3, k0=0.1, basis_halfwidth=4)
    snaps, _ = period_propagators(p, samples_per_period=4, steps_per_period=512)
    a0 = eigensystem(p, p.k0)[1][:, 0].astype(complex)
    TB = bloch_period(p.F0)
    sol = solve_ivp(lambda t, y: -1j * (hamiltonian_at(p, t) @ y), (0, TB), a0, method="DOP853",
                    rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(snaps[-1] @ a0, sol.y[:, -1], atol=1e-7)
    np.testing.assert_allclose(snaps[0], np.eye(p.dim), atol=1e-15)


def test_magnus_is_fourth_order():
    p = LatticeParams(V0=2.0, F0=1.0, basis_halfwidth=4)
    ref = period_propagators(p, 2, 4096)[0][-1]
    errs = [np.abs(period_propagators(p, 2, n)[0][-1] - ref).max() for n in (128, 256)]
    assert 10 < errs[0] / errs[1] < 24


def test_period_propagator_is_unitary():
    u = period_propagators(phase_params(2.0, 3.0), 8)[0][-1]
    np.testing.assert_allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=1e-10)


def test_norm_conserved_and_populations_complete(plateau_run):
    traj = plateau_run
    assert np.all(np.abs(traj.norm_series - 1) < 1e-8)
    np.testing.assert_allclose(traj.band_populations.sum(axis=1), traj.norm_series, atol=1e-10)
    assert traj.metadata["edge_loss"] < 1e-20


def test_sampling_grid(plateau_run):
    traj = plateau_run
    assert traj.sample_times.size == 3 * 32 + 1
    np.testing.assert_allclose(traj.time_over_TB, np.arange(97) / 32, atol=1e-12)
    assert traj.survival_series[0] == pytest.approx(1.0, abs=1e-12)


def test_first_step_matches_landau_zener(plateau_run):
    s12, _ = survival_amplitudes(1.5, 2 * math.pi / plateau_run.bloch_period)
    assert abs(plateau_run.survival_series[32] / s12**2 - 1) < 0.1


def test_step_doubling_converged():
    p = phase_params(1.5, 2.0, k0=0.2)
    a = evolve(p, n_bloch_periods=2, samples_per_period=8).survival_series
    b = evolve(p, n_bloch_periods=2, samples_per_period=8, steps_per_period=8192).survival_series
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_adiabatic_limit_keeps_ground_band():
    traj = evolve(LatticeParams(V0=8.0, F0=0.3), n_bloch_periods=2, samples_per_period=8)
    assert traj.survival_series.min() > 0.999


def test_trajectory_csv(tmp_path, plateau_run):
    path = plateau_run.to_csv(tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(TRAJECTORY_COLUMNS)
    assert len(lines) == plateau_run.sample_times.size + 1


def test_band1_state_populations():
    p = LatticeParams(V0=2.0, F0=1.0, k0=0.3)
    pops = adiabatic_populations(band1_state(p), p)
    assert pops[0] == pytest.approx(1.0) and pops[1:].sum() < 1e-20


def test_populations_fold_quasi_momentum():
    p = LatticeParams(V0=2.0, F0=1.0)
    st0 = band1_state(p, 0.4)
    # the same Bloch state labelled with k + 2 is shifted by one plane wave
    shifted = WavePacketState(np.roll(st0.amplitudes, -1), 0.0, 2.4)
    np.testing.assert_allclose(adiabatic_populations(shifted, p), adiabatic_populations(st0, p),
                               atol=1e-12)


# -- protocols ----------------------------------------------------------------


@pytest.mark.parametrize("kwargs", [dict(kind="nope"), dict(kind="randomized_halt"),
                                    dict(kind="randomized_halt", halt_probability=1.5),
                                    dict(kind="constant_force", halt_probability=0.5)])
def test_protocol_validation(kwargs):
    with pytest.raises(ValueError):
        Protocol(**kwargs)


def test_protocol_action_only_at_period_boundaries():
    p = LatticeParams(V0=1.0, F0=1.0)
    state = band1_state(p)
    state.time = 0.3
    with pytest.raises(ValueError):
        apply_protocol_action(state, p, Protocol("phase_reversal_halt"), 0)


def test_randomized_halt_extremes_reproduce_deterministic_protocols():
    p = phase_params(1.5, 2.0, k0=0.2)
    kw = dict(n_bloch_periods=3, samples_per_period=8)
    plain = evolve(p, Protocol(), **kw)
    halted = evolve(p, Protocol("phase_reversal_halt"), **kw)
    never = evolve(p, Protocol("randomized_halt", 0.0, rng_seed=3), **kw)
    always = evolve(p, Protocol("randomized_halt", 1.0, rng_seed=3), **kw)
    assert np.array_equal(never.band_populations, plain.band_populations)
    assert np.array_equal(always.band_populations, halted.band_populations)
    assert halted.metadata["halted_periods"] == [1, 2, 3]
    assert halted.metadata["halt_time"] > 0


def test_randomized_halt_is_seeded():
    p = phase_params(1.5, 2.0, k0=0.2)
    kw = dict(n_bloch_periods=4, samples_per_period=8)
    a = evolve(p, Protocol("randomized_halt", 0.5, rng_seed=11), **kw)
    b = evolve(p, Protocol("randomized_halt", 0.5, rng_seed=11), **kw)
    assert np.array_equal(a.band_populations, b.band_populations)
    assert a.metadata["halted_periods"] == b.metadata["halted_periods"]


def test_halt_time_is_excluded_from_the_clock():
    p = phase_params(1.5, 2.0, k0=0.2)
    kw = dict(n_bloch_periods=2, samples_per_period=8)
    assert np.array_equal(evolve(p, Protocol("phase_reversal_halt"), **kw).sample_times,
                          evolve(p, **kw).sample_times)


def test_phase_reversal_changes_drop_heights():
    p = phase_params(1.5, 2.0, k0=0.2)
    kw = dict(n_bloch_periods=4, samples_per_period=16)
    plain = evolve(p, **kw).survival_series[16::16]
    halted = evolve(p, Protocol("phase_reversal_halt"), **kw).survival_series[16::16]
    # a halt only rephases band 2, so populations at the first boundary agree
    assert plain[0] == pytest.approx(halted[0], rel=1e-12)
    assert np.max(np.abs(halted[1:] / plain[1:] - 1)) > 0.05


def test_empty_second_band_removes_band_two_each_period():
    p = phase_params(1.5, 2.0, k0=0.2)
    traj = evolve(p, Protocol("empty_second_band"), n_bloch_periods=3, samples_per_period=8)
    at_periods = traj.band_populations[8::8]
    assert np.all(at_periods[:, 1:].sum(axis=1) < 1e-20)
    assert traj.metadata["emptied_norm"] > 0
    # each period removes the same fraction: equal steps on a log scale
    ratios = at_periods[1:, 0] / at_periods[:-1, 0]
    assert np.ptp(ratios) < 0.02


# -- adiabatic coupling -------------------------------------------------------


def hellmann_feynman(p, t):
    """<1|d/dt|2> = (dk/dt) <1|dH/dk|2> / (E2 - E1) with dH/dk = diag 2(k + 2n)."""
    k = p.k0 + p.F0 * t / math.pi
    w, v = eigensystem(p, k, bands=2)
    dH = 2.0 * (k + 2.0 * p.plane_wave_indices)
    return p.F0 / math.pi * (v[:, 0] * dH) @ v[:, 1] / (w[1] - w[0])


@settings(max_examples=15, deadline=None)
@given(st.floats(min_value=0.3, max_value=6.0), st.floats(min_value=0.05, max_value=0.95))
def test_coupling_matches_hellmann_feynman(V0, frac):
    p = LatticeParams(V0=V0, F0=1.0)
    t = frac * bloch_period(p.F0)
    c = adiabatic_coupling(p, [t])[0]
    assert abs(abs(c) - abs(hellmann_feynman(p, t))) < 1e-6 * max(1.0, abs(c))


def test_coupling_gauge_is_continuous():
    p = LatticeParams(V0=1.0, F0=1.0)
    t = np.linspace(0, bloch_period(1.0), 201)
    c = adiabatic_coupling(p, t)
    ref = np.array([hellmann_feynman(p, x) for x in t])
    np.testing.assert_allclose(np.abs(c), np.abs(ref), atol=1e-6)
    # transported gauge: no sign flips along the grid
    assert np.all(np.sign(c) == np.sign(c[0]))


def test_lorentzian_half_width():
    p = LatticeParams(V0=1.0, F0=1.0)
    gap, rate, tc = lattice_crossing(p)
    TB = bloch_period(p.F0)
    t = np.linspace(0, TB, 20001)
    hw = coupling_half_width(t, lz_coupling_lorentzian(gap, rate, t, tc))
    assert hw == pytest.approx(p.V0 / 16 * TB, rel=1e-4)
    assert tc == pytest.approx(TB / 2)


def test_lorentzian_integrates_to_quarter_turn():
    # the LZ mixing angle rotates by pi/2 across the crossing
    t = np.linspace(-2000, 2000, 400001)
    c = lz_coupling_lorentzian(0.5, 0.3, t, 0.0)
    assert np.trapezoid(c, t) == pytest.approx(math.pi / 2, rel=1e-3)


def test_coupling_half_width_grows_with_depth():
    widths = []
    for V0 in (0.5, 1.0, 2.0, 4.0):
        p = LatticeParams(V0=V0, F0=1.0)
        t = np.linspace(0, bloch_period(1.0), 401)
        widths.append(coupling_half_width(t, adiabatic_coupling(p, t)))
    assert np.all(np.diff(widths) > 0)


def test_integrator_failure_raises(monkeypatch):
    import blochret.propagator as prop

    monkeypatch.setattr(prop, "_unitarity_defect", lambda u: 1.0)
    with pytest.raises(IntegratorError):
        prop.period_propagators(LatticeParams(V0=1.0, F0=1.0, k0=0.123), 4, 64)
