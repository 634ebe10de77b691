"""Command-line entry point: ``stokes-afem {run,diagnose,dump-mesh}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from .adaptive import LevelError, RunConfig, records_to_csv, records_to_json, run
from .mesh2d import DOMAINS

EXIT_OK, EXIT_USAGE, EXIT_SOLVER = 0, 2, 3


def _theta(text: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--theta expects a number, got {text!r}")
    if not 0 < val < 1:
        raise argparse.ArgumentTypeError(f"--theta must lie in (0, 1), got {val}")
    return val


def _positive_int(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {val}")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stokes-afem", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        # None means "not given" so that config-file values can fill in
        p.add_argument("--domain", choices=DOMAINS, default=None)
        p.add_argument("--mode", choices=("adaptive", "uniform"), default=None)
        p.add_argument("--theta", type=_theta, default=None)
        p.add_argument("--nev", type=_positive_int, default=None)
        p.add_argument("--max-dofs", type=_positive_int, default=None)
        p.add_argument("--levels", type=_positive_int, default=None, help="maximum number of levels")
        p.add_argument("--eig-tol", type=float, default=None)
        p.add_argument("--config", type=Path, default=None, help="JSON file with RunConfig fields")

    p = sub.add_parser("run", help="run the adaptive or uniform loop")
    common(p)
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--dump-mesh", action="store_true", help="write the mesh of every level as JSON")
    p.add_argument("--dump-matrices", action="store_true", help="write Matrix Market files per level")
    p.add_argument("--no-timings", action="store_true", help="write zero timings (byte-stable CSV)")

    p = sub.add_parser("diagnose", help="run one of the diagnostic checks")
    common(p)
    p.add_argument("--check", choices=("identity1", "identity2", "infsup"), required=True)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("dump-mesh", help="write the mesh of a given level as JSON")
    common(p)
    p.add_argument("--level", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    return parser


def resolve_config(args) -> RunConfig:
    """flags > config file > defaults."""
    values = {}
    if args.config is not None:
        values.update(json.loads(args.config.read_text()))
    flag_map = {"domain": "domain", "mode": "mode", "theta": "theta", "nev": "nev",
                "max_dofs": "max_dofs", "levels": "max_levels", "eig_tol": "eig_tol"}
    for flag, name in flag_map.items():
        val = getattr(args, flag, None)
        if val is not None:
            values[name] = val
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**values)


def _cmd_run(args, config: RunConfig) -> int:
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)

    def on_level(level, mesh, space, ops, pairs, ind, marked):
        if args.dump_mesh:
            mesh.dump(out / f"mesh_{level:03d}.json")
        if args.dump_matrices:
            from .assembly import write_matrix_market
            write_matrix_market(ops, out / f"level_{level:03d}")

    records = run(config, on_level=on_level)
    (out / "records.csv").write_text(records_to_csv(records, timings=not args.no_timings))
    (out / "records.json").write_text(json.dumps(records_to_json(config, records), indent=1))
    last = records[-1]
    print(f"{len(records)} levels, final dofs={last.dofs} lambda={last.lam[0]:.10f} eta={last.eta:.4e}")
    return EXIT_OK


def _cmd_diagnose(args, config: RunConfig) -> int:
    from .diagnostics import run_check
    report = run_check(args.check, config)
    text = json.dumps(report, indent=1)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
    print(text)
    return EXIT_OK if report.get("passed", True) else 1


def _cmd_dump_mesh(args, config: RunConfig) -> int:
    from .mesh2d import create_initial_mesh, uniform_refine

    if args.level == 0 or config.mode == "uniform":
        mesh = create_initial_mesh(config.domain)
        for _ in range(args.level):
            mesh, _ = uniform_refine(mesh)
    else:
        captured = {}

        def grab(level, mesh, *rest):
            captured[level] = mesh

        cfg = RunConfig(**{**config.__dict__, "max_levels": args.level + 1})
        run(cfg, on_level=grab)
        if args.level not in captured:
            raise ValueError(f"level {args.level} not reached within max_dofs")
        mesh = captured[args.level]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    mesh.dump(args.out)
    print(f"wrote {mesh.n_cells} cells to {args.out}")
    return EXIT_OK


def _limit_threads() -> None:
    n = os.environ.get("STOKES_AFEM_THREADS")
    if not n:
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(int(n))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _limit_threads()
    try:
        config = resolve_config(args)
    except (ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    handlers = {"run": _cmd_run, "diagnose": _cmd_diagnose, "dump-mesh": _cmd_dump_mesh}
    try:
        return handlers[args.command](args, config)
    except LevelError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
