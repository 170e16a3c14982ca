"""Command-line entry point: ``blochret <experiment> [--config file.yaml] [overrides]``."""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .errors import NumericalError
from .experiments import (
    EXPERIMENTS,
    ConfigError,
    SweepError,
    config_from_mapping,
    load_config,
    run,
    suggested_plots,
)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2

_PARAM_FLAGS = ("V0", "F0", "k0", "basis_halfwidth", "bz_grid_points", "phi_over_2pi")
_OPTION_FLAGS = ("n_bloch_periods", "samples_per_period", "steps_per_period", "skip_transient",
                 "n_bands", "k0_points", "gap_source")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blochret", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name.replace("_", "-"), help=f"run the {name} experiment")
        p.set_defaults(experiment=name)
        p.add_argument("--config", help="YAML config; flags override its values")
        p.add_argument("--out", help="output CSV path (metadata goes to <out>.meta.json)")
        p.add_argument("--seed", type=int, help="RNG seed")
        p.add_argument("--workers", type=int, help="parallel worker processes")
        lat = p.add_argument_group("lattice")
        for flag in ("V0", "F0", "k0", "phi_over_2pi"):
            lat.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=float)
        for flag in ("basis_halfwidth", "bz_grid_points"):
            lat.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=int)
        opt = p.add_argument_group("options")
        for flag in _OPTION_FLAGS:
            kind = str if flag == "gap_source" else int
            opt.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=kind)
        opt.add_argument("--periods", dest="n_bloch_periods", type=int,
                         help="alias of --n-bloch-periods")
        opt.add_argument("--V0-values", dest="V0_values", type=float, nargs="+")
        opt.add_argument("--simulate", action="store_true", default=None,
                         help="z-scaling: add full-propagator fits")
        proto = p.add_argument_group("protocol")
        proto.add_argument("--protocol", dest="protocol_kind")
        proto.add_argument("--halt-probability", type=float)
        p.add_argument("--sweep", nargs=4, metavar=("PARAM", "MIN", "MAX", "COUNT"))
    return parser


def merged_mapping(args: argparse.Namespace) -> dict:
    data = load_config(args.config) if args.config else {}
    if data.get("experiment") not in (None, args.experiment, args.command):
        raise ConfigError(f"config is for {data['experiment']!r}, not {args.command!r}")
    data["experiment"] = args.experiment
    params = dict(data.get("params") or {})
    for key in _PARAM_FLAGS:
        if getattr(args, key) is not None:
            params[key] = getattr(args, key)
    if args.F0 is not None:
        params.pop("phi_over_2pi", None)
    data["params"] = params
    options = dict(data.pop("options", None) or {})
    for key in (*_OPTION_FLAGS, "V0_values", "simulate", "workers"):
        if getattr(args, key) is not None:
            options[key] = getattr(args, key)
    data["options"] = options
    if args.protocol_kind is not None or args.halt_probability is not None:
        proto = dict(data.get("protocol") or {})
        if args.protocol_kind is not None:
            proto["kind"] = args.protocol_kind
        if args.halt_probability is not None:
            proto["halt_probability"] = args.halt_probability
        data["protocol"] = proto
    if args.sweep is not None:
        name, lo, hi, count = args.sweep
        try:
            data["sweep"] = {"parameter": name, "min": float(lo), "max": float(hi), "count": int(count)}
        except ValueError as exc:
            raise ConfigError(f"bad --sweep values: {exc}") from exc
    if args.seed is not None:
        data["rng_seed"] = args.seed
    if args.out is not None:
        data["output_path"] = args.out
    return data


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_mapping(merged_mapping(args))
        csv_path, meta_path = run(config)
    except ConfigError as exc:
        print(f"blochret: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"blochret: cannot write output: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SweepError as exc:
        numerical = isinstance(exc.cause, (NumericalError, ArithmeticError))
        print(f"blochret: {'numerical failure' if numerical else 'invalid configuration'}: {exc}",
              file=sys.stderr)
        return EXIT_NUMERICAL if numerical else EXIT_VALIDATION
    except (NumericalError, ArithmeticError) as exc:
        print(f"blochret: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"blochret: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"wrote {csv_path} and {meta_path}")
    for pairing in suggested_plots(config.experiment):
        print(f"  plot: {pairing}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
