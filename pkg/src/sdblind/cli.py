"""Command-line driver.

Exit codes: 0 success, 1 usage, 2 calibration failure, 3 I/O.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .attack import AliceSource, parse_strategy
from .config import ConfigError, fmt, load_setup, read_kv, setup_to_kv, write_kv
from .harness import (
    RF_COLUMNS,
    SESSION_COLUMNS,
    SWEEP_COLUMNS,
    CalibrationAnchors,
    SweepSpec,
    calibrate,
    rf_scan,
    run_session,
    session_row,
    sweep,
    sweep_rows,
)
from .protocol import KeyRateModel

EXIT_USAGE, EXIT_CALIBRATION, EXIT_IO = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _typed(cls, kv: dict[str, str], prefix: str):
    vals = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}.{f.name}"
        if key not in kv:
            continue
        default = f.default
        raw = kv.pop(key)
        if isinstance(default, tuple):
            vals[f.name] = tuple(float(v) for v in raw.split(","))
        elif isinstance(default, bool):
            vals[f.name] = raw.lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            vals[f.name] = int(float(raw))
        elif isinstance(default, float):
            vals[f.name] = float(raw)
        else:
            vals[f.name] = raw
    return cls(**vals)


def _reject_leftovers(kv: dict[str, str]) -> None:
    if kv:
        raise UsageError(f"unknown configuration keys: {', '.join(sorted(kv))}")


def cmd_calibrate(args) -> int:
    base, rest = load_setup(args.config)
    _reject_leftovers(rest)
    anchors = CalibrationAnchors()
    if args.anchors:
        kv = read_kv(args.anchors)
        anchors = _typed(CalibrationAnchors, kv, "anchors")
        _reject_leftovers(kv)
    result = calibrate(anchors, base, max_candidates=args.max_candidates)
    for name, (ok, value) in result.report.items():
        print(f"{'ok  ' if ok else 'FAIL'} {name}: {value}", file=sys.stderr)
    if not result.ok:
        print(f"calibration failed after {result.tried} candidates", file=sys.stderr)
        return EXIT_CALIBRATION
    write_kv(args.out, setup_to_kv(result.setup))
    return 0


def cmd_sweep(args) -> int:
    setup, rest = load_setup(args.params, args.config)
    spec = _typed(SweepSpec, rest, "sweep")
    _reject_leftovers(rest)
    rows = sweep_rows(sweep(setup, spec, jobs=args.jobs))
    write_csv(args.out, SWEEP_COLUMNS, rows)
    return 0


def cmd_rf_scan(args) -> int:
    setup, rest = load_setup(args.params, args.config)
    _reject_leftovers(rest)
    grid = np.round(np.arange(0.0, args.v_max + 1e-9, args.v_step), 9)
    rows = rf_scan(setup, grid, power=args.power, pattern=args.pattern,
                   level_mv=args.disc_mv, gates=args.gates, seed=args.seed)
    write_csv(args.out, RF_COLUMNS, rows)
    return 0


def cmd_session(args) -> int:
    setup, rest = load_setup(args.params, args.config)
    source = _typed(AliceSource, rest, "attack")
    keyrate = _typed(KeyRateModel, rest, "protocol")
    _reject_leftovers(rest)
    try:
        strategy = parse_strategy(args.strategy)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not 0 <= args.p_im <= 1 or args.gates < 1:
        raise UsageError("need 0 <= p_im <= 1 and gates >= 1")
    res = run_session(setup, strategy, args.p_im, args.gates, args.seed,
                      level_mv=args.disc_mv, v_rf=args.v_rf, source=source, keyrate=keyrate)
    write_csv(args.out, SESSION_COLUMNS, [session_row(res, args.strategy, args.p_im, args.seed)])
    print(f"{res.decision}: {res.reason}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sdblind", description="Self-differencing APD blinding simulator")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    c = sub.add_parser("calibrate", help="search model constants meeting the anchors")
    c.add_argument("--anchors", type=Path)
    c.add_argument("--config", type=Path, help="base parameters to start from")
    c.add_argument("--out", type=Path, required=True)
    c.add_argument("--max-candidates", type=int, help="stop the grid search after this many")
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("sweep", help="count rate versus CW power")
    s.add_argument("--params", type=Path)
    s.add_argument("--config", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("rf-scan", help="counts per IM activation versus RF drive")
    r.add_argument("--params", type=Path)
    r.add_argument("--config", type=Path)
    r.add_argument("--out", type=Path, required=True)
    r.add_argument("--power", type=float, default=1e-3)
    r.add_argument("--pattern", default="fixed:1/128")
    r.add_argument("--disc-mv", type=float, default=26.0)
    r.add_argument("--v-max", type=float, default=4.0)
    r.add_argument("--v-step", type=float, default=0.1)
    r.add_argument("--gates", type=int, default=1_000_000)
    r.add_argument("--seed", type=int, default=1)
    r.set_defaults(func=cmd_rf_scan)

    q = sub.add_parser("session", help="end-to-end BB84 session")
    q.add_argument("--strategy", required=True)
    q.add_argument("--p-im", type=float, required=True)
    q.add_argument("--gates", type=int, default=1_000_000)
    q.add_argument("--seed", type=int, default=1)
    q.add_argument("--out", type=Path, required=True)
    q.add_argument("--params", type=Path)
    q.add_argument("--config", type=Path)
    q.add_argument("--disc-mv", type=float, default=26.0)
    q.add_argument("--v-rf", type=float, default=4.0)
    q.set_defaults(func=cmd_session)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ValueError) as exc:
        print(f"sdblind: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"sdblind: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
