"""Command-line entry point: ``scrambling <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

from . import __version__
from .runner import RUNNERS, ExperimentSpec, StateEntry, load_spec, verify_manifest

log = logging.getLogger("scrambling")


def _state(text: str) -> StateEntry:
    """Parse ``family:theta[:phi]`` with angles in units of pi."""
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError(f"expected family:theta[:phi], got {text!r}")
    try:
        return StateEntry(parts[0], *(float(p) for p in parts[1:]))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _log_base(text: str) -> float:
    if text == "e":
        return math.e
    if text == "2":
        return 2.0
    raise argparse.ArgumentTypeError("log base must be 2 or e")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scrambling", description="Quench dynamics and scrambling of spin chains.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with ExperimentSpec fields")
    common.add_argument("--model", choices=["ising", "sqa"])
    common.add_argument("--n", type=int, help="number of chain qubits")
    common.add_argument("--out", help="output root directory (default: results)")
    common.add_argument("--workers", type=int, help="parallel processes over initial states")
    common.add_argument("--full-scale", action="store_true", help="n=14, t up to 1000, window [100, 1000]")
    common.add_argument("--log-base", type=_log_base, help="entropy logarithm base: 2 or e")
    common.add_argument("--seed", type=int, help="seed for randomized checks")
    common.add_argument("--state", type=_state, action="append", help="initial state family:theta[:phi] (pi units)")
    common.add_argument("--t-end", type=float)
    common.add_argument("--window", type=float, nargs=2, metavar=("T_I", "T_F"))
    common.add_argument("--reuse", action="store_true", help="keep existing outputs whose manifest matches")
    common.add_argument("-v", "--verbose", action="store_true")

    helps = {
        "spectrum": "eigenvalues and density of states",
        "tmi-dynamics": "I_3(t) for each initial state",
        "epsilon-sweep": "time-averaged I_3 against energy density",
        "thermalization": "local observables and RDM distance against the Gibbs state",
        "cusp-study": "first cusp of the magnetization against chain length",
        "validate": "small-n oracle checks",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    v = sub.add_parser("verify", help="re-check the checksums of a manifest")
    v.add_argument("manifest", help="manifest.json or the run directory holding it")
    return parser


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    spec = load_spec(args.config) if args.config else ExperimentSpec()
    if args.full_scale:
        spec = spec.full_scale()
    return spec.replace(
        model=args.model,
        n=args.n,
        out=args.out,
        workers=args.workers,
        log_base=args.log_base,
        seed=args.seed,
        states=tuple(args.state) if args.state else None,
        t_end=args.t_end,
        window=tuple(args.window) if args.window else None,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
    if args.command == "verify":
        problems = verify_manifest(args.manifest)
        for p in problems:
            print(p)
        print("manifest OK" if not problems else f"{len(problems)} problem(s)")
        return 1 if problems else 0
    try:
        spec = spec_from_args(args)
        result = RUNNERS[args.command](spec, reuse=args.reuse)
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {result.directory}")
    print(json.dumps(result.summary, indent=2, sort_keys=True))
    if args.command == "validate" and not result.summary.get("all_passed", False):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
