"""Command-line front end.

Exit status: 0 on success, 2 when the configuration is invalid, 3 when a
numerical failure stops the run.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import load_preset, load_yaml, parse, preset_names, validate
from .errors import InvalidInputError, NumericalError, OutOfRegimeError
from .experiments import run
from .rng import default_workers

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

EPILOG = """exit status:
  0  success
  2  configuration validation failure (nothing is written)
  3  numerical failure (nothing is written)

presets: """


def _build_parser():
    p = argparse.ArgumentParser(
        prog="rydqpm",
        description="Simulate dipole-dipole population transfer and QPM control sequences in Rydberg gases.",
        epilog=EPILOG + ", ".join(preset_names()),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def source(sp):
        g = sp.add_mutually_exclusive_group(required=True)
        g.add_argument("--config", metavar="PATH", help="experiment configuration file (YAML)")
        g.add_argument("--preset", metavar="NAME", help="bundled configuration name")
        sp.add_argument("--seed", type=int, help="override the configured seed")

    r = sub.add_parser("run", help="run one experiment and write CSV plus a manifest")
    source(r)
    r.add_argument("--out", metavar="DIR", default=".", help="output directory (default: current)")
    r.add_argument("--workers", type=int, default=None, help="worker processes (default: logical cores)")
    r.add_argument("--verbose", "-v", action="store_true", help="log progress and dump per-group geometry")

    v = sub.add_parser("validate", help="check a configuration and list every error")
    source(v)

    sub.add_parser("presets", help="list bundled configurations")
    return p


def _load(args):
    data = load_preset(args.preset) if args.preset else load_yaml(args.config)
    if args.seed is not None and isinstance(data, dict):
        data = {**data, "seed": args.seed}
    return data


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "presets":
        for name in preset_names():
            print(name)
        return EXIT_OK

    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        data = _load(args)
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    errors = validate(data)
    if args.command == "validate":
        for e in errors:
            print(e)
        return EXIT_INVALID if errors else EXIT_OK
    if errors:
        for e in errors:
            print(f"invalid: {e}", file=sys.stderr)
        return EXIT_INVALID

    cfg = parse(data)
    workers = args.workers if args.workers is not None else default_workers()
    if workers < 1:
        print("invalid: --workers must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        manifest = run(cfg, args.out, workers=workers, verbose=args.verbose)
    except (InvalidInputError, OutOfRegimeError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for name in manifest.outputs:
        print(name)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
