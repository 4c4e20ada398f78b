# capillary_bernoulli/__main__.py
"""
Command line interface.

    capbern solve configs/minimal.yml
    capbern sweep configs/sweep_m.yml --max-workers 4
    capbern analyze runs/minimal
    capbern exact --out runs/exact
    capbern verify --quick
    capbern plot runs/minimal
    capbern varstab --out runs/varstab

Exit codes: 0 success, 1 failed invariants (verify), 2 configuration error,
3 missing artifact, 4 internal error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .config import LOG_FORMAT, LOG_LEVEL, OUTPUT_ROOT, THREADS
from .exceptions import EXIT_INTERNAL, EXIT_OK, CapBernError, ConfigurationError

# Setup logging
logger = logging.getLogger(__name__)

EXIT_INVARIANTS_FAILED = 1


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigurationError(
            f"Expected comma-separated numbers, got '{text}'"
        ) from e


def _cmd_solve(args: argparse.Namespace) -> int:
    from .pipeline import run_solve

    run_dir = run_solve(Path(args.config), args.out, threads=args.threads)
    print(run_dir)
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    from .sweep import run_sweep

    sweep_dir = run_sweep(
        Path(args.sweep), args.out, max_workers=args.max_workers, threads=args.threads
    )
    print(sweep_dir)
    return EXIT_OK


def _cmd_analyze(args: argparse.Namespace) -> int:
    from .pipeline import analyze_run

    summary = analyze_run(Path(args.run_dir))
    print(summary["verdict"])
    return EXIT_OK


def _cmd_exact(args: argparse.Namespace) -> int:
    from .pipeline import run_exact

    report = run_exact(args.out, q=args.q, ms=_floats(args.ms), h=args.h)
    for row in report["angles"]:
        print(f"m={row['m']:+.3f}  theta={row['theta_deg']:.4f} deg")
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    from .verify import run_verify

    only = args.only.split(",") if args.only else None
    report = run_verify(args.out, quick=args.quick, only=only)
    for name in report["failed"]:
        print(f"FAILED {name}")
    return EXIT_OK if report["passed"] else EXIT_INVARIANTS_FAILED


def _cmd_plot(args: argparse.Namespace) -> int:
    from .plotting import plot

    for path in plot(Path(args.target)):
        print(path)
    return EXIT_OK


def _cmd_varstab(args: argparse.Namespace) -> int:
    from .pipeline import run_varstab

    families = args.families.split(",") if args.families else None
    run_varstab(args.out, q=args.q, m=args.m, h=args.h, families=families)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capbern",
        description="Bernoulli free boundary solver and verifier with a capillary wall",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-level", default=LOG_LEVEL)
    parser.add_argument(
        "--threads", type=int, default=THREADS, help="recorded in the run manifest"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve, analyze and audit one configuration")
    p.add_argument("config", help="run configuration (YAML)")
    p.add_argument("--out", type=Path, default=None, help="run directory")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("sweep", help="run every cell of a parameter sweep")
    p.add_argument("sweep", help="sweep configuration (YAML)")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--max-workers", type=int, default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("analyze", help="re-run analysis on a solved run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("exact", help="closed-form angles, wedge and degenerate gaps")
    p.add_argument("--out", type=Path, default=OUTPUT_ROOT / "exact")
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--ms", default="-0.8,-0.4,0,0.4,0.8")
    p.add_argument("--h", type=float, default=1 / 64)
    p.set_defaults(func=_cmd_exact)

    p = sub.add_parser("verify", help="run the invariant suite")
    p.add_argument("--out", type=Path, default=OUTPUT_ROOT / "verify")
    p.add_argument("--quick", action="store_true", help="coarse grids")
    p.add_argument("--only", default="", help="comma-separated invariant names")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("plot", help="SVG figures for a run or sweep directory")
    p.add_argument("target")
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("varstab", help="shape-derivative and variation reports")
    p.add_argument("--out", type=Path, default=OUTPUT_ROOT / "varstab")
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--m", type=float, default=0.0)
    p.add_argument("--h", type=float, default=1 / 32)
    p.add_argument("--families", default="", help="comma-separated flow families")
    p.set_defaults(func=_cmd_varstab)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format=LOG_FORMAT)
    try:
        return int(args.func(args))
    except CapBernError as e:
        logger.error(str(e))
        return e.exit_code
    except Exception:  # noqa: BLE001
        logger.exception("Internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
