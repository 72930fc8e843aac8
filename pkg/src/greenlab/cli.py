"""Command-line driver.

Subcommands::

    greenlab simulate --params P --horizon 35 --out DIR [--snapshots 18,25,30,35]
    greenlab synth    --params P --stages 18,25,30,35 --noise 0.05 --seed 1 --out targets.csv
    greenlab fit      --targets T --params P --config C --out DIR
    greenlab compare  A B --out comparison.csv

Exit codes: 0 ok, 2 input error, 3 simulation error, 4 calibration failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import sys
from pathlib import Path

from . import calibration
from .core import ORGAN_KINDS, ParameterSet
from .errors import (
    AllocationDeadlockError,
    CalibrationFailure,
    GreenlabError,
    HorizonError,
    ParameterDomainError,
    TargetParseError,
    TargetValidationError,
)
from .paramfile import format_value, read_params, to_flat
from .simulator import run, sink_curves, snapshot_geometry
from .targets import read_targets, synthesize_targets, write_targets

log = logging.getLogger("greenlab")

EXIT_OK, EXIT_INPUT, EXIT_SIMULATION, EXIT_CALIBRATION = 0, 2, 3, 4
DEFAULT_SNAPSHOTS = (18, 25, 30, 35)


class InputError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{path}: no such file")
    return p


def _write(path: Path, text: str, echo: bool) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)
    if echo:
        sys.stdout.write(text)


def _sink_curve_csv(params: ParameterSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k"] + [k.name.lower() for k in ORGAN_KINDS])
    for k, *vals in sink_curves(params):
        w.writerow([k] + [repr(v) for v in vals])
    return buf.getvalue()


def cmd_simulate(args) -> int:
    params = read_params(_existing(args.params))
    if args.horizon is None or args.horizon < 1:
        raise InputError(f"--horizon must be >= 1, got {args.horizon}")
    if args.snapshots is None:
        snapshots = [s for s in DEFAULT_SNAPSHOTS if s <= args.horizon]
    else:
        snapshots = sorted(set(args.snapshots))
        bad = [s for s in snapshots if not 1 <= s <= args.horizon]
        if bad:
            raise InputError(f"snapshots {bad} outside horizon 1..{args.horizon}")
    trace = run(params, args.horizon)
    out = Path(args.out)
    _write(out / "trace.csv", trace.to_csv(), args.stdout)
    for gc in snapshots:
        skeleton = snapshot_geometry(trace.at(gc), params, args.angle)
        _write(out / f"skeleton_gc{gc:03d}.txt", skeleton.to_text(), False)
    _write(out / "sink_curves.csv", _sink_curve_csv(params), False)
    return EXIT_OK


def cmd_synth(args) -> int:
    params = read_params(_existing(args.params))
    stages = args.stages or list(DEFAULT_SNAPSHOTS)
    horizon = args.horizon if args.horizon is not None else max(stages)
    if horizon < 1:
        raise InputError(f"--horizon must be >= 1, got {horizon}")
    if args.noise < 0:
        raise InputError("--noise must be >= 0")
    if max(stages) > horizon or min(stages) < 1:
        raise InputError(f"stages {stages} outside horizon 1..{horizon}")
    trace = run(params, horizon)
    targets = synthesize_targets(trace, stages, args.noise, args.seed)
    _write(Path(args.out), write_targets(targets), args.stdout)
    return EXIT_OK


def cmd_fit(args) -> int:
    params = read_params(_existing(args.params))
    targets = read_targets(_existing(args.targets), params.treatment, params.branch_delays or (6, 5))
    if args.config:
        config = calibration.parse_fit_config(_existing(args.config).read_text(encoding="utf-8"))
    else:
        config = calibration.FitConfig(free=calibration.default_free(params.treatment))
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    config.resolve(params)
    result = calibration.fit(config, params, targets)
    out = Path(args.out)
    _write(out / "result.params", calibration.write_fit_result(result), args.stdout)
    _write(out / "residuals.csv", calibration.write_residuals(result), False)
    return EXIT_OK


def cmd_compare(args) -> int:
    a = read_params(_existing(args.result_a))
    b = read_params(_existing(args.result_b))
    fa, fb = to_flat(a), to_flat(b)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["item", "a", "b", "difference", "ratio"])
    w.writerow(["treatment", fa["treatment"], fb["treatment"], "", ""])
    for key in list(fa) + [k for k in fb if k not in fa]:
        if key == "treatment":
            continue
        va, vb = fa.get(key), fb.get(key)
        if va is None or vb is None:
            w.writerow([f"param:{key}", "" if va is None else format_value(va), "" if vb is None else format_value(vb), "", ""])
            continue
        va, vb = float(va), float(vb)
        ratio = repr(vb / va) if va != 0 else ""
        w.writerow([f"param:{key}", repr(va), repr(vb), repr(vb - va), ratio])
    ca, cb = dict((k, v) for k, *v in sink_curves(a)), dict((k, v) for k, *v in sink_curves(b))
    for k in range(1, max(len(ca), len(cb)) + 1):
        for col, kind in enumerate(ORGAN_KINDS):
            va = ca[k][col] if k in ca else 0.0
            vb = cb[k][col] if k in cb else 0.0
            w.writerow([f"sink:{kind.name.lower()}:k={k}", repr(va), repr(vb), repr(vb - va), ""])
    _write(Path(args.out), buf.getvalue(), args.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="greenlab", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output file or directory")
        p.add_argument("--stdout", action="store_true", help="also print the main output to stdout")

    p = sub.add_parser("simulate", help="run the model and export trace, skeletons and sink curves")
    p.add_argument("--params", required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--snapshots", type=_int_list)
    p.add_argument("--angle", type=float, default=45.0, help="branch insertion angle in degrees")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth", help="synthesize a target file from a simulation")
    p.add_argument("--params", required=True)
    p.add_argument("--stages", type=_int_list)
    p.add_argument("--horizon", type=int)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="estimate hidden parameters from a target file")
    p.add_argument("--targets", required=True)
    p.add_argument("--params", required=True, help="fixed values and initial guesses")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="tabulate two parameter or result files side by side")
    p.add_argument("result_a")
    p.add_argument("result_b")
    common(p)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (InputError, TargetParseError, TargetValidationError, ParameterDomainError, HorizonError, OSError) as e:
        print(f"greenlab: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except CalibrationFailure as e:
        print(f"greenlab: calibration failed: {e}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (AllocationDeadlockError, GreenlabError, FloatingPointError) as e:
        print(f"greenlab: simulation error: {e}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
