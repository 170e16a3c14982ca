"""Experiment configurations, parallel sweeps and figure-data generation."""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from . import __version__
from .cascade import RESONANCE_COLUMNS, resonance_map, resonance_point, resonance_rows
from .decay_fit import DEFAULT_SKIP_TRANSIENT, DecayEstimate, fit_exponential, sample_plateaus
from .io import write_csv, write_json
from .lattice import (
    LatticeParams,
    average_band_gap,
    band_spectrum,
    bloch_period,
    gap_estimate_large_v,
    gap_estimate_small_v,
)
from .propagator import (
    DEFAULT_STEPS_PER_PERIOD,
    TRAJECTORY_COLUMNS,
    Protocol,
    Trajectory,
    adiabatic_coupling,
    coupling_half_width,
    evolve,
    lattice_crossing,
    lz_coupling_lorentzian,
)

EXPERIMENTS = ("bands", "gap_curve", "simulate", "effective_map", "z_scaling", "coupling_map",
               "broad_average", "sweep")
SWEEP_PARAMETERS = ("V0", "F0", "k0", "phi", "phi_over_2pi")
GAP_SOURCES = ("numerical", "small_v", "large_v")
MIN_K0_POINTS = 32


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 1)."""


class SweepError(RuntimeError):
    def __init__(self, index: int, point: Any, cause: BaseException):
        super().__init__(f"sweep point {index} failed ({point!r}): {cause}")
        self.index, self.point, self.cause = index, point, cause


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    min: float
    max: float
    count: int

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"cannot sweep {self.parameter!r}; choose from {SWEEP_PARAMETERS}")
        if int(self.count) != self.count or self.count < 2:
            raise ConfigError("sweep count must be an integer >= 2")
        if not self.min < self.max:
            raise ConfigError("sweep requires min < max")

    def values(self) -> np.ndarray:
        return np.linspace(self.min, self.max, int(self.count))


# defaults per experiment: sweep grid and options
_DEFAULT_SWEEPS = {
    "gap_curve": SweepSpec("V0", 0.0, 10.0, 51),
    "effective_map": SweepSpec("phi_over_2pi", 1.0, 12.0, 221),
    "z_scaling": SweepSpec("phi", 4.0, 40.0, 73),
    "coupling_map": SweepSpec("V0", 0.25, 6.0, 24),
    "broad_average": SweepSpec("phi_over_2pi", 3.0, 4.0, 9),
    "sweep": SweepSpec("F0", 0.25, 1.2, 200),
}

_DEFAULT_OPTIONS = {
    "n_bloch_periods": None,  # 5 for simulate, 12 for fitted experiments
    "samples_per_period": None,  # 64 for simulate/coupling_map, 8 for fitted experiments
    "steps_per_period": DEFAULT_STEPS_PER_PERIOD,
    "skip_transient": DEFAULT_SKIP_TRANSIENT,
    "workers": 1,
    "n_bands": 3,
    "V0_values": [1.0, 2.0, 3.0, 4.0],
    "k0_points": 32,
    "simulate": False,
    "gap_source": "numerical",
}

_SUGGESTED_PLOTS = {
    "bands": ["k vs band_1, band_2, band_3"],
    "gap_curve": ["V0 vs gap_numerical, gap_small_v, gap_large_v"],
    "simulate": ["time_over_TB vs P_band1 (log y)", "time_over_TB vs P_band2"],
    "effective_map": ["phi_over_2pi vs gamma_per_period", "phi_over_2pi vs Z_projection"],
    "z_scaling": ["phi vs Z_minus_1_effective grouped by V0"],
    "coupling_map": ["t_over_TB vs V0 coloured by c_normalized"],
    "broad_average": ["phi vs Z_minus_1_broad, Z_minus_1_narrow"],
    "sweep": ["phi_over_2pi vs gamma_per_period", "phi_over_2pi vs Z"],
}


@dataclass
class ExperimentConfig:
    experiment: str
    params: LatticeParams
    protocol: Protocol = field(default_factory=Protocol)
    sweep: SweepSpec | None = None
    output_path: str = "out.csv"
    rng_seed: int = 0
    phi_over_2pi: float | None = None
    options: dict = field(default_factory=dict)

    def option(self, name: str):
        value = self.options.get(name, _DEFAULT_OPTIONS[name])
        if value is None:
            fitted = self.experiment in ("z_scaling", "broad_average", "sweep")
            if name == "n_bloch_periods":
                return 12 if fitted else 5
            if name == "samples_per_period":
                return 8 if fitted else 64
        return value

    def grid(self) -> np.ndarray:
        spec = self.sweep or _DEFAULT_SWEEPS.get(self.experiment)
        if spec is None:
            raise ConfigError(f"experiment {self.experiment!r} takes no sweep")
        return spec.values()

    def sweep_spec(self) -> SweepSpec | None:
        return self.sweep or _DEFAULT_SWEEPS.get(self.experiment)

    def lattice(self) -> LatticeParams:
        """Lattice parameters with F0 resolved from phi_over_2pi when given."""
        if self.phi_over_2pi is not None:
            gap = mean_gap(self.params, self.option("gap_source"))
            return replace(self.params, F0=gap / self.phi_over_2pi)
        return self.params

    def as_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "params": asdict(self.params),
            "phi_over_2pi": self.phi_over_2pi,
            "protocol": self.protocol.as_dict(),
            "sweep": asdict(self.sweep) if self.sweep else None,
            "effective_sweep": asdict(s) if (s := self.sweep_spec()) else None,
            "output_path": str(self.output_path),
            "rng_seed": self.rng_seed,
            "options": {k: self.option(k) for k in _DEFAULT_OPTIONS},
        }

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        unknown = set(self.options) - set(_DEFAULT_OPTIONS)
        if unknown:
            raise ConfigError(f"unknown options: {sorted(unknown)}")
        if self.option("gap_source") not in GAP_SOURCES:
            raise ConfigError(f"gap_source must be one of {GAP_SOURCES}")
        if int(self.option("workers")) < 1:
            raise ConfigError("workers must be >= 1")
        if self.option("samples_per_period") < 2:
            raise ConfigError("samples_per_period must be >= 2")
        if self.option("n_bloch_periods") < 1:
            raise ConfigError("n_bloch_periods must be >= 1")
        k0_points = int(self.option("k0_points"))
        if k0_points != 1 and k0_points < MIN_K0_POINTS:
            raise ConfigError(f"k0_points must be 1 (narrow check) or >= {MIN_K0_POINTS}")
        spec = self.sweep_spec()
        if spec is not None and spec.parameter in ("F0", "phi", "phi_over_2pi") and not spec.min > 0:
            raise ConfigError(f"{spec.parameter} sweep must stay positive")
        if self.experiment == "simulate" and not self.lattice().F0 > 0:
            raise ConfigError("simulate needs F0 > 0 (or phi_over_2pi)")
        out = Path(self.output_path)
        parent = out.parent if str(out.parent) else Path(".")
        if not parent.is_dir() or not os.access(parent, os.W_OK):
            raise ConfigError(f"output directory {parent} is missing or not writable")
        return self


def _lattice_from(mapping: dict) -> tuple[LatticeParams, float | None]:
    mapping = dict(mapping or {})
    phi = mapping.pop("phi_over_2pi", None)
    allowed = {"V0", "F0", "k0", "basis_halfwidth", "bz_grid_points"}
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown lattice parameters: {sorted(unknown)}")
    mapping.setdefault("V0", 1.0)
    try:
        return LatticeParams(**mapping), (None if phi is None else float(phi))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_from_mapping(data: dict) -> ExperimentConfig:
    data = dict(data or {})
    try:
        experiment = str(data.pop("experiment")).replace("-", "_")
    except KeyError:
        raise ConfigError("config must name an experiment") from None
    params, phi = _lattice_from(data.pop("params", {}))
    seed = int(data.pop("rng_seed", 0))
    try:
        proto = dict(data.pop("protocol", None) or {})
        proto.setdefault("rng_seed", seed)
        protocol = Protocol(**proto)
        sweep = data.pop("sweep", None)
        sweep = SweepSpec(**sweep) if sweep else None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    output = data.pop("output_path", f"{experiment}.csv")
    options = data.pop("options", {}) or {}
    options.update(data)  # options may also sit at top level
    return ExperimentConfig(experiment=experiment, params=params, protocol=protocol, sweep=sweep,
                            output_path=str(output), rng_seed=seed, phi_over_2pi=phi,
                            options=options).validate()


def load_config(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return data


# -- shared helpers -----------------------------------------------------------


def mean_gap(params: LatticeParams, source: str = "numerical") -> float:
    if source == "small_v":
        return gap_estimate_small_v(params.V0)
    if source == "large_v":
        return gap_estimate_large_v(params.V0)
    return average_band_gap(params)


def sweep_runner(func: Callable, grid: Sequence, worker_count: int = 1) -> list:
    """Evaluate ``func`` on every grid point; results come back in grid order."""
    grid = list(grid)
    if not grid:
        raise ConfigError("sweep grid is empty")
    if worker_count <= 1 or len(grid) == 1:
        results = []
        for i, point in enumerate(grid):
            try:
                results.append(func(point))
            except Exception as exc:
                raise SweepError(i, point, exc) from exc
        return results
    with ProcessPoolExecutor(max_workers=min(worker_count, len(grid))) as pool:
        futures = [pool.submit(func, point) for point in grid]
        results = []
        for i, (point, fut) in enumerate(zip(grid, futures)):
            try:
                results.append(fut.result())
            except Exception as exc:
                for f in futures[i + 1:]:
                    f.cancel()
                raise SweepError(i, point, exc) from exc
        return results


def _with(params: LatticeParams, **changes) -> LatticeParams:
    return replace(params, **changes)


def narrow_decay(params: LatticeParams, n_periods: int, samples_per_period: int,
                 steps_per_period: int, skip_transient: int,
                 protocol: Protocol | None = None) -> DecayEstimate:
    traj = evolve(params, protocol, n_periods, samples_per_period, steps_per_period)
    return fit_exponential(sample_plateaus(traj), skip_transient)


def _decay_point(args) -> tuple:
    params, n_periods, spp, steps, skip = args
    return narrow_decay(params, n_periods, spp, steps, skip).row()


def _survival_point(args) -> np.ndarray:
    params, n_periods, spp, steps = args
    return evolve(params, None, n_periods, spp, steps).survival_series


def k0_grid(points: int) -> np.ndarray:
    """Midpoints of a uniform partition of [-1, 1); a single point sits at k0 = 0."""
    return -1.0 + (np.arange(points) + 0.5) * 2.0 / points


def averaged_trajectory(trajectories: Sequence[np.ndarray], template: Trajectory) -> Trajectory:
    mean = np.mean(np.vstack(trajectories), axis=0)
    pops = np.zeros_like(template.band_populations)
    pops[:, 0] = mean
    return Trajectory(template.sample_times, pops, np.ones_like(mean), template.bloch_period,
                      {"averaged_over": len(trajectories)})


def broad_decay(params: LatticeParams, k0_points: int, n_periods: int, spp: int, steps: int,
                skip: int, workers: int = 1) -> DecayEstimate:
    """Fit on the survival averaged incoherently over a uniform k0 grid."""
    jobs = [(_with(params, k0=float(k)), n_periods, spp, steps) for k in k0_grid(k0_points)]
    series = sweep_runner(_survival_point, jobs, workers)
    return _fit_average(series, params, n_periods, spp, skip)


def _fit_average(series, params, n_periods, spp, skip) -> DecayEstimate:
    TB = bloch_period(params.F0)
    times = np.arange(n_periods * spp + 1) * TB / spp
    template = Trajectory(times, np.zeros((times.size, 2)), np.ones(times.size), TB)
    return fit_exponential(sample_plateaus(averaged_trajectory(series, template)), skip)


def _resolve_point(base: LatticeParams, parameter: str, value: float, gap_source: str) -> LatticeParams:
    """Lattice parameters for one sweep value (phi sweeps fix F0 through the mean gap)."""
    if parameter in ("V0", "F0", "k0"):
        return _with(base, **{parameter: float(value)})
    phi_over_2pi = value / (2 * math.pi) if parameter == "phi" else value
    return _with(base, F0=mean_gap(base, gap_source) / phi_over_2pi)


# -- experiments --------------------------------------------------------------


def _run_bands(cfg: ExperimentConfig):
    spec = band_spectrum(cfg.params)
    nb = int(cfg.option("n_bands"))
    header = ["k"] + [f"band_{a + 1}" for a in range(nb)]
    rows = ([k, *spec.energies[i, :nb]] for i, k in enumerate(spec.k_grid))
    return header, list(rows), {}


def _run_gap_curve(cfg: ExperimentConfig):
    rows = []
    for V0 in cfg.grid():
        p = _with(cfg.params, V0=float(V0))
        large = gap_estimate_large_v(V0) if V0 > 0.25 else float("nan")
        rows.append((float(V0), average_band_gap(p), gap_estimate_small_v(V0), large))
    return ["V0", "gap_numerical", "gap_small_v", "gap_large_v"], rows, {}


def _run_simulate(cfg: ExperimentConfig):
    params = cfg.lattice()
    traj = evolve(params, cfg.protocol, int(cfg.option("n_bloch_periods")),
                  int(cfg.option("samples_per_period")), int(cfg.option("steps_per_period")))
    extra = {"trajectory": traj.metadata, "F0": params.F0, "bloch_period": traj.bloch_period}
    try:
        extra["decay_estimate"] = fit_exponential(sample_plateaus(traj),
                                                  int(cfg.option("skip_transient"))).as_record()
    except ValueError as exc:
        extra["decay_estimate"] = f"not fitted: {exc}"
    return list(TRAJECTORY_COLUMNS), list(traj.rows()), extra


def _force_grid(cfg: ExperimentConfig, V0: float) -> np.ndarray:
    spec = cfg.sweep_spec()
    values = spec.values()
    base = _with(cfg.params, V0=V0)
    if spec.parameter == "F0":
        return values
    if spec.parameter in ("phi", "phi_over_2pi"):
        return np.array([_resolve_point(base, spec.parameter, v, cfg.option("gap_source")).F0
                         for v in values])
    raise ConfigError(f"{cfg.experiment} sweeps F0, phi or phi_over_2pi, not {spec.parameter}")


def _run_effective_map(cfg: ExperimentConfig):
    V0 = cfg.params.V0
    F0s = _force_grid(cfg, V0)
    if cfg.option("gap_source") == "numerical":
        points = resonance_map(V0, F0s, cfg.params)
    else:
        gap = mean_gap(cfg.params, cfg.option("gap_source"))
        points = [resonance_point(V0, float(f), gap) for f in F0s]
    return list(RESONANCE_COLUMNS), list(resonance_rows(points)), {}


def _run_z_scaling(cfg: ExperimentConfig):
    simulate = bool(cfg.option("simulate"))
    header = ["V0", "F0", "phi", "phi_over_2pi", "gamma_effective", "Z_effective",
              "Z_minus_1_effective", "gamma_simulated", "Z_simulated", "Z_minus_1_simulated"]
    points, jobs = [], []
    for V0 in cfg.option("V0_values"):
        base = _with(cfg.params, V0=float(V0), k0=cfg.params.k0)
        gap = mean_gap(base, cfg.option("gap_source"))
        for F0 in _force_grid(cfg, float(V0)):
            points.append(resonance_point(float(V0), float(F0), gap))
            jobs.append((_with(base, F0=float(F0)), int(cfg.option("n_bloch_periods")),
                         int(cfg.option("samples_per_period")), int(cfg.option("steps_per_period")),
                         int(cfg.option("skip_transient"))))
    sims = sweep_runner(_decay_point, jobs, int(cfg.option("workers"))) if simulate else [None] * len(jobs)
    rows = []
    for pt, job, sim in zip(points, jobs, sims):
        nan = float("nan")
        Zs, gs = (sim[0], sim[1]) if sim else (nan, nan)
        rows.append((job[0].V0, pt.F0, pt.phi, pt.phi_over_2pi, pt.gamma_per_period,
                     pt.Z_projection, pt.Z_projection - 1, gs, Zs, Zs - 1))
    return header, rows, {}


def _run_coupling_map(cfg: ExperimentConfig):
    F0 = cfg.params.F0 if cfg.params.F0 > 0 else 1.0
    n_t = int(cfg.options.get("samples_per_period") or 200)
    rows = []
    widths = {}
    for V0 in cfg.grid():
        p = _with(cfg.params, V0=float(V0), F0=F0)
        TB = bloch_period(F0)
        t = np.linspace(0.0, TB, n_t + 1)
        c = np.abs(adiabatic_coupling(p, t, normalize=True))
        gap, rate, tc = lattice_crossing(p)
        lor = lz_coupling_lorentzian(gap, rate, t, tc)
        lor = lor / lor.max()
        widths[repr(float(V0))] = coupling_half_width(t, c) / TB
        rows.extend((float(V0), ti / TB, ci, li) for ti, ci, li in zip(t, c, lor))
    return ["V0", "t_over_TB", "c_normalized", "lorentzian_normalized"], rows, {"half_width_over_TB": widths}


def _run_broad_average(cfg: ExperimentConfig):
    n_per, spp = int(cfg.option("n_bloch_periods")), int(cfg.option("samples_per_period"))
    steps, skip = int(cfg.option("steps_per_period")), int(cfg.option("skip_transient"))
    ks = k0_grid(int(cfg.option("k0_points")))
    V0 = cfg.params.V0
    F0s = _force_grid(cfg, V0)
    base = cfg.params
    jobs = []
    for F0 in F0s:
        for k in ks:
            jobs.append((_with(base, F0=float(F0), k0=float(k)), n_per, spp, steps))
        jobs.append((_with(base, F0=float(F0)), n_per, spp, steps))
    series = sweep_runner(_survival_point, jobs, int(cfg.option("workers")))
    gap = mean_gap(base, cfg.option("gap_source"))
    rows = []
    stride = ks.size + 1
    for j, F0 in enumerate(F0s):
        p = _with(base, F0=float(F0))
        chunk = series[j * stride:(j + 1) * stride]
        broad = _fit_average(chunk[:-1], p, n_per, spp, skip)
        narrow = _fit_average(chunk[-1:], p, n_per, spp, skip)
        phi = 2 * math.pi * gap / F0
        rows.append((V0, float(F0), phi, phi / (2 * math.pi), broad.Z, broad.gamma_per_period,
                     narrow.Z, narrow.gamma_per_period, broad.Z - 1, narrow.Z - 1))
    header = ["V0", "F0", "phi", "phi_over_2pi", "Z_broad", "gamma_broad", "Z_narrow",
              "gamma_narrow", "Z_minus_1_broad", "Z_minus_1_narrow"]
    return header, rows, {"k0_grid": ks.tolist()}


def _run_sweep(cfg: ExperimentConfig):
    spec = cfg.sweep_spec()
    gap_source = cfg.option("gap_source")
    params = [_resolve_point(cfg.params, spec.parameter, v, gap_source) for v in spec.values()]
    jobs = [(p, int(cfg.option("n_bloch_periods")), int(cfg.option("samples_per_period")),
             int(cfg.option("steps_per_period")), int(cfg.option("skip_transient"))) for p in params]
    results = sweep_runner(_decay_point, jobs, int(cfg.option("workers")))
    rows = []
    for p, res in zip(params, results):
        rows.append((p.V0, p.F0, p.k0, mean_gap(p, gap_source) / p.F0, *res))
    header = ["V0", "F0", "k0", "phi_over_2pi", "Z", "gamma_per_period", "gamma_per_time",
              "n_min", "n_max", "residual"]
    return header, rows, {}


_RUNNERS = {
    "bands": _run_bands,
    "gap_curve": _run_gap_curve,
    "simulate": _run_simulate,
    "effective_map": _run_effective_map,
    "z_scaling": _run_z_scaling,
    "coupling_map": _run_coupling_map,
    "broad_average": _run_broad_average,
    "sweep": _run_sweep,
}


def metadata_path(output_path) -> Path:
    return Path(str(output_path) + ".meta.json")


def run(config: ExperimentConfig) -> tuple[Path, Path]:
    """Run one experiment; writes the CSV and its metadata sidecar."""
    config.validate()
    started = time.perf_counter()
    header, rows, extra = _RUNNERS[config.experiment](config)
    out = write_csv(config.output_path, header, rows)
    meta = {
        "config": config.as_dict(),
        "rng_seed": config.rng_seed,
        "code_version": __version__,
        "columns": list(header),
        "suggested_plots": _SUGGESTED_PLOTS[config.experiment],
        "results": extra,
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    return out, write_json(metadata_path(out), meta)


def suggested_plots(experiment: str) -> list[str]:
    return _SUGGESTED_PLOTS[experiment]
