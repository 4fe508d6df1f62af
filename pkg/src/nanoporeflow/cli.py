"""Command-line interface.

Subcommands: validate, simulate, sample, landau, quantum, sweep, report and
pipeline (all stages).  Exit codes: 0 success, 2 validation failure,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, quantum
from .config import (ConfigError, ParseError, ValidationError, parse_config,
                     validate_config)
from .pipeline import build_report, run_pipeline, _write_report

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

EV = 1.602176634e-19


def _add_common(sub):
    sub.add_argument("--config", required=True, help="TOML configuration file")
    sub.add_argument("--out", default=".", help="output directory")
    sub.add_argument("--workers", type=int, default=1,
                     help="worker count (results are deterministic per count)")
    sub.add_argument("--resume", action="store_true",
                     help="skip stages whose outputs verify against the manifest")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nanoporeflow",
                                description="Two-phase nanopore flow simulator "
                                            "and criterion analysis")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("validate", help="validate a config file")
    sp.add_argument("--config", required=True)

    for name, stages in (("simulate", ("simulate",)),
                         ("sample", ("sample",)),
                         ("landau", ("landau",)),
                         ("sweep", ("landau",)),
                         ("report", ("report",)),
                         ("pipeline", ("simulate", "sample", "landau",
                                       "quantum", "report"))):
        sp = sub.add_parser(name)
        _add_common(sp)
        if name in ("sample", "pipeline"):
            sp.add_argument("--field", default=None,
                            help="external VTK velocity field to analyze")
        if name == "report":
            sp.add_argument("--runs", nargs="*", default=None,
                            help="additional run directories to combine")
        sp.set_defaults(stages=stages)

    qp = sub.add_parser("quantum", help="quantum-statistical calculators")
    qsub = qp.add_subparsers(dest="verb", required=True)

    dq = qsub.add_parser("debroglie")
    dq.add_argument("--ke", type=float, required=True, help="kinetic energy")
    dq.add_argument("--e0", type=float, required=True, help="rest energy")
    dq.add_argument("--ev", action="store_true", help="inputs are in eV")

    dp = qsub.add_parser("dispersion")
    dp.add_argument("--input", required=True,
                    help="CSV with header k,v_p or lambda,v_p")
    dp.add_argument("--out", default=None)

    mp = qsub.add_parser("modes")
    mp.add_argument("--L", type=float, required=True)
    mp.add_argument("--nmax", type=int, required=True)
    mp.add_argument("--mass", type=float, required=True)
    mp.add_argument("--N", type=float, required=True)
    mp.add_argument("--T", type=float, required=True)

    fp = qsub.add_parser("fock")
    fp.add_argument("--nmax", type=int, required=True)

    return p


def _cmd_validate(args) -> int:
    try:
        config = parse_config(args.config)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValidationError as exc:
        for v in exc.violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_VALIDATION
    report = validate_config(config)
    if report.ok:
        print("config valid")
        return EXIT_OK
    for v in report.violations:
        print(f"violation: {v}", file=sys.stderr)
    return EXIT_VALIDATION


def _cmd_stage(args) -> int:
    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    field = getattr(args, "field", None)
    bundle, _manifest = run_pipeline(config, stages=args.stages,
                                     out_dir=args.out, resume=args.resume,
                                     field_path=field)
    runs = getattr(args, "runs", None)
    if args.command == "report" and runs:
        bundle = build_report([args.out, *runs])
        _write_report(bundle, Path(args.out))
    if bundle is not None:
        for row in bundle.rows:
            status = "satisfied" if row["satisfied"] else "not satisfied"
            print(f"{row['config_id']}: q^2={row['q_squared']:.6e} "
                  f"threshold={row['threshold']:.6e} -> {status}")
    return EXIT_OK


def _cmd_quantum(args) -> int:
    if args.verb == "debroglie":
        scale = EV if args.ev else 1.0
        lam = quantum.de_broglie_wavelength(args.ke * scale, args.e0 * scale)
        print(json.dumps({"wavelength_m": lam}))
    elif args.verb == "dispersion":
        with open(args.input, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [(float(a), float(b)) for a, b in reader]
        x = np.array([r[0] for r in rows])
        v_p = np.array([r[1] for r in rows])
        kind = header[0].strip().lower()
        if kind in ("k", "wavenumber"):
            v_g = quantum.group_velocity_from_k(x, v_p)
        elif kind in ("lambda", "wavelength"):
            v_g = quantum.group_velocity_from_lambda(x, v_p)
        else:
            print(f"unrecognized abscissa column {header[0]!r}", file=sys.stderr)
            return EXIT_VALIDATION
        out = sys.stdout if args.out is None else open(args.out, "w", newline="")
        try:
            w = csv.writer(out)
            w.writerow([kind, "v_g"])
            for xi, vg in zip(x, v_g):
                w.writerow([repr(float(xi)), repr(float(vg))])
        finally:
            if out is not sys.stdout:
                out.close()
    elif args.verb == "modes":
        grid = quantum.build_mode_grid(args.L, args.nmax, args.mass)
        Q = quantum.solve_chemical_potential(grid, args.N, args.T)
        frac = quantum.condensate_fraction(grid, args.N, args.T)
        print(json.dumps({
            "mode_count": grid.mode_count,
            "chemical_potential_J": Q,
            "condensate_fraction": frac,
            "spectrum_lowest_J": list(grid.sorted_spectrum()[:10]),
        }))
    elif args.verb == "fock":
        space = quantum.ladder_operators(args.nmax)
        print(json.dumps({
            "n_max": space.n_max,
            "number_eigenvalues": list(np.diag(space.number_operator)),
            "commutator_diagonal": list(np.diag(space.commutator)),
        }))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "quantum":
            return _cmd_quantum(args)
        return _cmd_stage(args)
    except ConfigError as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime failure contract
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
