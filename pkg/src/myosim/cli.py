"""Command line entry point: ``myosim {run,study,inspect,plan}``.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 IO error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .errors import (ConfigError, DatasetError, InfeasibleLayoutError, MeshError, MyosimError, SolverError)
from .io import Dataset
from .partition import STRATEGIES, boundary_metrics, factorize, optimize_layout
from .scenario import CODECS, Scenario
from .simulation import run_scenario
from .studies import KINDS, TIMING_COLUMNS, Table, run_study

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def _scenario(args) -> Scenario:
    return Scenario.load(args.config) if args.config else Scenario()


def cmd_run(args) -> int:
    sc = _scenario(args)
    res = run_scenario(sc, out=args.out, workers=args.workers, codec=args.codec, scheme=args.scheme)
    if args.csv:
        Table("run", list(TIMING_COLUMNS), res.report.rows("run")).to_csv(args.csv)
    _print(res.summary)
    return EXIT_OK


def _study_options(args) -> dict:
    if not args.config:
        return {}
    try:
        options = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read study options {args.config}: {exc}") from exc
    if not isinstance(options, dict):
        raise ConfigError("study options must be a mapping of keyword arguments")
    return options


def cmd_study(args) -> int:
    options = _study_options(args)
    if args.workers is not None and args.kind == "partition_sweep":
        options["n_proc"] = args.workers
    try:
        table = run_study(args.kind, **options)
    except TypeError as exc:
        raise ConfigError(f"bad study options for {args.kind}: {exc}") from exc
    if args.csv:
        table.to_csv(args.csv)
    else:
        table.write_csv(sys.stdout)
    if args.out:
        table.to_dataset(args.out)
    meta = {k: v for k, v in table.meta.items() if k != "reports"}
    if meta:
        print(json.dumps(meta, sort_keys=True, default=_json_default), file=sys.stderr)
    return EXIT_OK


def cmd_inspect(args) -> int:
    status = EXIT_OK
    for path in args.paths:
        try:
            ds = Dataset.open(path)
            report = ds.validate()
            report["header"] = ds.header.to_dict()
            report["valid"] = True
        except DatasetError as exc:
            report = {"path": str(path), "valid": False, "error": str(exc)}
            status = EXIT_IO
        _print(report)
    return status


def cmd_plan(args) -> int:
    if args.dims:
        dims = tuple(args.dims)
    else:
        dims = _scenario(args).muscle().dims
    workers = args.workers or 1
    if args.optimize:
        lay = optimize_layout(workers, dims, args.strategy)
    else:
        lay = factorize(workers, dims, args.strategy)
    cm = boundary_metrics(lay)
    _print({"layout": lay.to_dict(), "block_size": list(lay.block_size), "partitions": lay.n_partitions,
            "total_area": cm.total_area, "average_area": cm.average_area,
            "ghost_elements_avg": cm.ghost_elements_avg})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="myosim", description="Multiscale muscle simulation and experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario")
    r.add_argument("--config", help="scenario YAML (defaults reproduce the twitch scenario)")
    r.add_argument("--workers", type=int)
    r.add_argument("--scheme", choices=("godunov", "strang"))
    r.add_argument("--out", help="dataset directory to record")
    r.add_argument("--codec", choices=CODECS)
    r.add_argument("--csv", help="write the timing report here")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("study", help="run an experiment and emit CSV")
    s.add_argument("kind", choices=KINDS)
    s.add_argument("--config", help="YAML mapping of study keyword arguments")
    s.add_argument("--workers", type=int, help="partition count (partition_sweep)")
    s.add_argument("--csv", help="CSV path (default: stdout)")
    s.add_argument("--out", help="also store the table as a dataset")
    s.set_defaults(func=cmd_study)

    i = sub.add_parser("inspect", help="print headers and validate datasets")
    i.add_argument("paths", nargs="+")
    i.set_defaults(func=cmd_inspect)

    pl = sub.add_parser("plan", help="choose a partition layout")
    pl.add_argument("--config")
    pl.add_argument("--workers", type=int)
    pl.add_argument("--dims", type=int, nargs=3, metavar=("EX", "EY", "EZ"))
    pl.add_argument("--strategy", choices=STRATEGIES, default="cubic")
    pl.add_argument("--optimize", action="store_true", help="allow leaving up to 10%% of workers idle")
    pl.set_defaults(func=cmd_plan)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, InfeasibleLayoutError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SolverError, MeshError, MyosimError, FloatingPointError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
