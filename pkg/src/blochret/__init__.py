"""Resonantly enhanced tunneling of Bloch states in tilted optical lattices."""

from __future__ import annotations

__version__ = "0.1.0"

from .cascade import (  # noqa: E402
    CascadeModel,
    asymptotic_rate,
    cascade_operator,
    finite_step_estimates,
    iterate_cascade,
    resonance_map,
    survival_amplitudes,
    z_closed_form,
    z_first_order,
    z_projection,
)
from .decay_fit import DecayEstimate, PlateauSamples, fit_exponential, sample_plateaus  # noqa: E402
from .errors import DegenerateModelError, GaugeError, IntegratorError, NumericalError  # noqa: E402
from .lattice import (  # noqa: E402
    BlochSpectrum,
    LatticeParams,
    average_band_gap,
    band_spectrum,
    bloch_period,
    bloch_phase,
    gap_estimate_large_v,
    gap_estimate_small_v,
)
from .propagator import Protocol, Trajectory, WavePacketState, adiabatic_coupling, evolve  # noqa: E402

__all__ = [
    "BlochSpectrum", "CascadeModel", "DecayEstimate", "DegenerateModelError", "GaugeError",
    "IntegratorError", "LatticeParams", "NumericalError", "PlateauSamples", "Protocol",
    "Trajectory", "WavePacketState", "adiabatic_coupling", "asymptotic_rate", "average_band_gap",
    "band_spectrum", "bloch_period", "bloch_phase", "cascade_operator", "evolve",
    "finite_step_estimates", "fit_exponential", "gap_estimate_large_v", "gap_estimate_small_v",
    "iterate_cascade", "resonance_map", "sample_plateaus", "survival_amplitudes",
    "z_closed_form", "z_first_order", "z_projection",
]
