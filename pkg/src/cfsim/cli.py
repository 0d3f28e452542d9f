"""Command-line entry point.

    cfsim run CASE [CASE ...] [--tend T] [--dt DT] [--seed N]
                   [--noise-sigma S] [--record BUSES] [--jobs N]
                   [--emit-plots] [--event SPEC ...]

Outputs land in $CFSIM_OUTDIR (default ./cfsim_out), one directory per case.
Exit codes: 0 ok, 1 input error, 2 initialization error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .casefile import CaseError, load_case, parse_event_flag
from .devices import ParameterError
from .engine import EventError, InitError, StepError
from .network import ModelError

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INIT = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfsim",
        description="Power system simulation with per-bus complex frequency output",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="simulate one or more case files")
    run.add_argument("cases", nargs="+", metavar="CASE", help="case file path(s)")
    run.add_argument("--tend", type=float, default=None, help="override horizon [s]")
    run.add_argument("--dt", type=float, default=None, help="override step [s]")
    run.add_argument("--seed", type=int, default=None, help="measurement-noise seed")
    run.add_argument(
        "--noise-sigma", type=float, default=None, help="measurement noise sigma [pu]"
    )
    run.add_argument(
        "--record",
        type=str,
        default=None,
        help="comma-separated 1-based bus ids to record (default: case setting)",
    )
    run.add_argument(
        "--event",
        action="append",
        default=[],
        metavar="SPEC",
        help="extra event, e.g. load5-trip@1.0, line5-7-trip@1.0, fault7@1.0-1.083",
    )
    run.add_argument("--jobs", type=int, default=1, help="parallel case workers")
    run.add_argument(
        "--emit-plots", action="store_true", help="render PNG figures with the CSVs"
    )
    return parser


def _run_one(args_tuple) -> tuple[str, int, str]:
    """Worker: returns (case path, exit code, message)."""
    from .report import write_outputs
    from .runner import run_case

    path, ns, outroot = args_tuple
    try:
        case = load_case(path)
        extra = []
        for spec in ns["event"]:
            extra += parse_event_flag(spec, case.n_bus)
        record = None
        if ns["record"] is not None:
            record = []
            for tok in ns["record"].split(","):
                h = int(tok) - 1
                if not 0 <= h < case.n_bus:
                    raise CaseError(f"--record: bus {tok} out of range")
                record.append(h)
        if ns["dt"] is not None and ns["dt"] <= 0:
            raise CaseError("--dt must be positive")
        if ns["tend"] is not None and ns["tend"] <= 0:
            raise CaseError("--tend must be positive")
        result = run_case(
            case,
            tend=ns["tend"],
            dt=ns["dt"],
            seed=ns["seed"],
            noise_sigma=ns["noise_sigma"],
            record=record,
            extra_events=extra,
        )
        outdir = Path(outroot) / case.name
        files = write_outputs(outdir, result, emit_plots=ns["emit_plots"])
        listing = ", ".join(str(f) for f in files)
        return (
            path,
            EXIT_OK,
            f"{case.name}: {len(result.traj.t) - 1} steps in "
            f"{result.runtime_s:.2f} s -> {listing}",
        )
    except (CaseError, ModelError, ParameterError, ValueError) as exc:
        return path, EXIT_INPUT, f"input error: {exc}"
    except InitError as exc:
        return path, EXIT_INIT, f"initialization error: {exc}"
    except (StepError, EventError) as exc:
        return path, EXIT_RUNTIME, f"runtime error: {exc}"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    outroot = os.environ.get("CFSIM_OUTDIR", "cfsim_out")
    ns = {
        "tend": args.tend,
        "dt": args.dt,
        "seed": args.seed,
        "noise_sigma": args.noise_sigma,
        "record": args.record,
        "event": args.event,
        "emit_plots": args.emit_plots,
    }
    work = [(path, ns, outroot) for path in args.cases]
    if args.jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, work))
    else:
        results = [_run_one(w) for w in work]
    rc = EXIT_OK
    for path, code, msg in results:
        stream = sys.stdout if code == EXIT_OK else sys.stderr
        print(f"[{path}] {msg}", file=stream)
        rc = max(rc, code)
    return rc


if __name__ == "__main__":
    sys.exit(main())
