"""Log-linear fits P_n = Z exp(-gamma n) to survival at the plateau centres."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .propagator import Trajectory

DEFAULT_SKIP_TRANSIENT = 2
RESIDUAL_WARNING = 0.05
DECAY_COLUMNS = ("Z", "gamma_per_period", "gamma_per_time", "n_min", "n_max", "residual")


class NonExponentialWarning(UserWarning):
    """The log-linear fit residual suggests the decay is not yet exponential."""


@dataclass(frozen=True)
class PlateauSamples:
    n_values: np.ndarray
    P_values: np.ndarray
    bloch_period: float = 1.0
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        n = np.asarray(self.n_values)
        P = np.asarray(self.P_values, dtype=float)
        if n.shape != P.shape:
            raise ValueError("n_values and P_values differ in length")
        if np.any(P <= 0):
            raise ValueError("survival probabilities must be strictly positive")
        if np.any(np.diff(n) <= 0):
            raise ValueError("n_values must be strictly increasing")

    @classmethod
    def from_sequence(cls, P, bloch_period: float = 1.0, source: dict | None = None):
        P = np.asarray(P, dtype=float)
        return cls(np.arange(P.size), P, bloch_period, source or {})


@dataclass(frozen=True)
class DecayEstimate:
    Z: float
    gamma_per_period: float
    gamma_per_time: float
    fit_window: tuple[int, int]
    residual: float

    def as_record(self) -> dict:
        return {"Z": self.Z, "gamma_per_period": self.gamma_per_period,
                "gamma_per_time": self.gamma_per_time, "n_min": self.fit_window[0],
                "n_max": self.fit_window[1], "residual": self.residual}

    def row(self) -> tuple:
        return tuple(self.as_record()[c] for c in DECAY_COLUMNS)


def sample_plateaus(trajectory: Trajectory, min_periods: int = 3,
                    min_samples_per_period: int = 8) -> PlateauSamples:
    """Survival at the sample nearest each t = n T_B."""
    t = trajectory.time_over_TB
    n_periods = int(math.floor(t[-1] + 1e-9))
    if n_periods < min_periods:
        raise ValueError(f"trajectory spans {t[-1]:.3g} Bloch periods; need >= {min_periods}")
    per_period = (t.size - 1) / max(t[-1], 1e-300)
    if per_period < min_samples_per_period - 1e-9:
        raise ValueError(f"need >= {min_samples_per_period} samples per period")
    n = np.arange(n_periods + 1)
    idx = np.abs(t[None, :] - n[:, None]).argmin(axis=1)
    return PlateauSamples(n, trajectory.survival_series[idx], trajectory.bloch_period,
                          {"protocol": trajectory.metadata.get("protocol")})


def fit_exponential(samples: PlateauSamples,
                    skip_transient: int = DEFAULT_SKIP_TRANSIENT) -> DecayEstimate:
    """Ordinary least squares on (n, log P_n) for n >= skip_transient."""
    n = np.asarray(samples.n_values, dtype=float)
    keep = n >= skip_transient
    if np.count_nonzero(keep) < 3:
        raise ValueError("fewer than 3 points remain after skipping the transient")
    x, y = n[keep], np.log(np.asarray(samples.P_values, dtype=float)[keep])
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    residual = float(np.sqrt(np.mean((y - A @ np.array([slope, intercept])) ** 2)))
    if residual > RESIDUAL_WARNING:
        warnings.warn(f"log-linear residual {residual:.3g} > {RESIDUAL_WARNING}: "
                      "decay is not exponential over the fit window", NonExponentialWarning,
                      stacklevel=2)
    gamma = float(-slope)
    return DecayEstimate(Z=float(math.exp(intercept)), gamma_per_period=gamma,
                         gamma_per_time=gamma / samples.bloch_period,
                         fit_window=(int(x[0]), int(x[-1])), residual=residual)
