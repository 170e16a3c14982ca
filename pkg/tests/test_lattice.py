from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import mathieu_a, mathieu_b

from blochret.errors import NumericalError
from blochret.lattice import (
    LatticeParams,
    align_gauge,
    average_band_gap,
    band_spectrum,
    bloch_hamiltonian,
    bloch_period,
    bloch_phase,
    bz_grid,
    eigensystem,
    fold_quasi_momentum,
    force_for_phase,
    gap_estimate_large_v,
    gap_estimate_small_v,
)

V0s = st.floats(min_value=0.0, max_value=20.0)
ks = st.floats(min_value=-1.0, max_value=1.0)


@pytest.mark.parametrize("V0", [0.4, 1.0, 2.0, 5.0, 12.0])
def test_band_edges_match_mathieu_characteristic_values(V0):
    # plane-wave Hamiltonian is the Mathieu operator with q = V0 / 4
    q = V0 / 4.0
    p = LatticeParams(V0=V0)
    w0, _ = eigensystem(p, 0.0, bands=2)
    w1, _ = eigensystem(p, 1.0, bands=2)
    a0, b2 = float(mathieu_a(0, q)), float(mathieu_b(2, q))
    a1, b1 = float(mathieu_a(1, q)), float(mathieu_b(1, q))
    np.testing.assert_allclose(w0, [a0, b2], rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(w1, sorted([a1, b1]), rtol=1e-9, atol=1e-9)


def test_free_particle_spectrum_is_parabolic():
    p = LatticeParams(V0=0.0, basis_halfwidth=6)
    k = 0.3
    w, _ = eigensystem(p, k)
    expected = np.sort((k + 2 * np.arange(-6, 7)) ** 2)
    np.testing.assert_allclose(w, expected, atol=1e-12)


def test_hamiltonian_structure():
    p = LatticeParams(V0=3.0, basis_halfwidth=2)
    H = bloch_hamiltonian(p, 0.5)
    assert H.shape == (5, 5)
    np.testing.assert_allclose(np.diag(H), (0.5 + 2 * np.arange(-2, 3)) ** 2)
    np.testing.assert_allclose(np.diag(H, 1), 0.75)
    assert np.allclose(H, H.T)
    assert np.count_nonzero(np.triu(H, 2)) == 0


@settings(max_examples=40, deadline=None)
@given(V0s, ks)
def test_spectrum_even_in_k(V0, k):
    p = LatticeParams(V0=V0)
    np.testing.assert_allclose(eigensystem(p, k, bands=3)[0], eigensystem(p, -k, bands=3)[0],
                               atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(V0s, ks)
def test_spectrum_periodic_in_reciprocal_vector(V0, k):
    p = LatticeParams(V0=V0)
    # truncation is symmetric, so only the low bands are shift invariant
    np.testing.assert_allclose(eigensystem(p, k, bands=3)[0], eigensystem(p, k + 2.0, bands=3)[0],
                               rtol=1e-9, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(V0s, ks)
def test_eigenvectors_orthonormal(V0, k):
    _, v = eigensystem(LatticeParams(V0=V0), k)
    np.testing.assert_allclose(v.T @ v, np.eye(v.shape[1]), atol=1e-10)


def test_band_spectrum_gauge_is_smooth():
    spec = band_spectrum(LatticeParams(V0=2.0, bz_grid_points=129))
    v = spec.eigenvectors
    overlaps = np.einsum("kib,kib->kb", v[:-1, :, :2], v[1:, :, :2])
    assert np.all(overlaps > 0.9)
    assert spec.energies.shape[0] == 129
    np.testing.assert_allclose(spec.band(1), spec.energies[:, 0])


def test_align_gauge_makes_overlaps_positive():
    rng = np.random.default_rng(1)
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    flipped = q * np.array([1, -1, 1, -1, -1, 1])
    aligned = align_gauge(q, flipped)
    np.testing.assert_allclose(aligned, q)


def test_free_particle_average_gap_is_two():
    assert abs(average_band_gap(LatticeParams(V0=0.0)) - 2.0) < 1e-3


@pytest.mark.parametrize("V0", [0.1, 0.5, 1.0])
def test_small_potential_gap_estimate(V0):
    assert abs(average_band_gap(LatticeParams(V0=V0)) / gap_estimate_small_v(V0) - 1) < 0.02


@pytest.mark.parametrize("V0", [16.0, 20.0, 30.0])
def test_deep_lattice_gap_estimate(V0):
    assert abs(average_band_gap(LatticeParams(V0=V0)) / gap_estimate_large_v(V0) - 1) < 0.05


def test_gap_estimates_limits():
    assert gap_estimate_small_v(0.0) == 2.0
    with pytest.raises(ValueError):
        gap_estimate_large_v(0.1)


def test_average_gap_grows_with_depth():
    gaps = [average_band_gap(LatticeParams(V0=v)) for v in (0.0, 2.0, 5.0, 10.0)]
    assert np.all(np.diff(gaps) > 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=0.0, max_value=10.0), st.floats(min_value=0.5, max_value=20.0))
def test_force_for_phase_inverts_bloch_phase(V0, phi_over_2pi):
    p = LatticeParams(V0=V0)
    F0 = force_for_phase(p, phi_over_2pi)
    assert math.isclose(bloch_phase(LatticeParams(V0=V0, F0=F0)), 2 * math.pi * phi_over_2pi,
                        rel_tol=1e-12)


def test_bloch_period():
    assert bloch_period(2 * math.pi) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        bloch_period(0.0)


@given(st.floats(min_value=-50, max_value=50))
def test_fold_quasi_momentum(k):
    kf, m = fold_quasi_momentum(k)
    assert -1.0 <= kf < 1.0 + 1e-12
    assert math.isclose(kf + 2 * m, k, abs_tol=1e-9)


def test_bz_grid():
    g = bz_grid(512)
    assert g.size == 512 and g[0] == -1.0 and g[-1] == 1.0


@pytest.mark.parametrize("kwargs", [dict(V0=-1.0), dict(V0=1.0, F0=-0.1), dict(V0=1.0, basis_halfwidth=0),
                                    dict(V0=1.0, bz_grid_points=1), dict(V0=float("nan"))])
def test_invalid_params_rejected(kwargs):
    with pytest.raises(ValueError):
        LatticeParams(**kwargs)


def test_params_dimensions():
    p = LatticeParams(V0=1.0, basis_halfwidth=15)
    assert p.dim == 31
    assert p.plane_wave_indices[0] == -15 and p.plane_wave_indices[-1] == 15


def test_eigensystem_failure_is_numerical_error(monkeypatch):
    import blochret.lattice as lat

    def boom(*a, **k):
        raise np.linalg.LinAlgError("no convergence")

    monkeypatch.setattr(lat, "eigh_tridiagonal", boom)
    with pytest.raises(NumericalError):
        lat.eigensystem(LatticeParams(V0=1.0), 0.2)
