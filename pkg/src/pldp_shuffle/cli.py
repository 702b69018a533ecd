"""Command-line entry point.

    pldp-shuffle curve --eps-law uniform2 --mechanism gaussian --delta-local 1e-10 --n 10000
    pldp-shuffle inverse --config run.ini --delta-target 1e-5
    pldp-shuffle clone-prob --mechanism laplace --eps1 3 --eps-grid 0.1:3:30
    pldp-shuffle oracle-check --eps-law uniform:0.3:3 --n 8

Exit status: 0 on success, 2 on a configuration error, 3 on a numeric error
(including a failed oracle check).
"""
from __future__ import annotations

import argparse
import sys
from typing import Sequence

import numpy as np

from .accountant import delta_s
from .errors import CalibrationError, ConfigError, NumericError, OracleLimitError
from .experiment import (
    CONFIG_KEYS, Table, build_config, build_population, emit, parse_grid, read_config_file,
    render_metadata, run_bound_curve, run_clone_profile, run_inverse,
)
from .oracle import MAX_EXACT_N, exact_mixture, hockey_stick

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

ORACLE_EPSILONS = (0.1, 0.5, 1.0, 2.0)
ORACLE_SLACK = 1e-9


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage already; keep the message short
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_population_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with an [experiment] section")
    p.add_argument("--mechanism", choices=["laplace", "gaussian", "randomized_response"])
    p.add_argument("--n", help="number of users")
    p.add_argument("--eps-law", help="uniform:lo:hi, gaussian_clipped:mean:std, "
                                     "explicit_list:a,b,... or a preset name")
    p.add_argument("--clip", help="clip range lo:hi")
    p.add_argument("--delta-local", help="local delta shared by all users")
    p.add_argument("--p-mode", choices=["hypothesis_test", "rr_reduction"])
    p.add_argument("--seed", help="64-bit unsigned seed")
    p.add_argument("--eps-grid", help="lo:hi:points, log-spaced")
    p.add_argument("--delta-target", help="target central delta for the inverse solve")
    p.add_argument("--workers", help="threads for the epsilon grid")
    _add_output_flags(p)


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out", help="output file (default: stdout)")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pldp-shuffle", description="Shuffle-model privacy accounting "
                     "for personalised local DP.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_population_flags(sub.add_parser("curve", help="delta_s over an epsilon grid"))
    _add_population_flags(sub.add_parser("inverse", help="smallest epsilon_s for a delta target"))
    _add_population_flags(sub.add_parser("oracle-check",
                                         help="compare delta_s with exact enumeration (n <= 20)"))
    cp = sub.add_parser("clone-prob", help="worst-case clone probability against epsilon_i")
    cp.add_argument("--mechanism", choices=["laplace", "gaussian", "randomized_response"],
                    default="laplace")
    cp.add_argument("--eps1", type=float, default=3.0, help="epsilon of the worst-case user")
    cp.add_argument("--eps-grid", default="0.1:3:30",
                    help="lo:hi:points; linear here, matching the usual profile plot")
    cp.add_argument("--delta-local", type=float, default=0.0)
    _add_output_flags(cp)
    return parser


def resolve_config(args: argparse.Namespace):
    """File values first, then any flag given on the command line."""
    values = read_config_file(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return build_config(values)


def _write(table: Table, args) -> None:
    text = emit(table, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)
        if args.format == "json" and table.metadata:
            sys.stderr.write(render_metadata(table))


def _cmd_curve(args) -> int:
    _write(run_bound_curve(resolve_config(args)), args)
    return EXIT_OK


def _cmd_inverse(args) -> int:
    config = resolve_config(args)
    result = run_inverse(config)
    _write(result.table, args)
    flag = "" if result.bound.amplified else " (no amplification)"
    print(f"epsilon_s={result.bound.epsilon:.6g} ratio={result.ratio:.6g}{flag}", file=sys.stderr)
    return EXIT_OK


def _cmd_clone_prob(args) -> int:
    grid = parse_grid(args.eps_grid)
    values = np.linspace(grid.lo, grid.hi, grid.points)
    _write(run_clone_profile(args.mechanism, args.eps1, values, args.delta_local), args)
    return EXIT_OK


def _cmd_oracle_check(args) -> int:
    config = resolve_config(args)
    if config.n > MAX_EXACT_N:
        raise ConfigError("n", f"oracle-check enumerates exactly and needs n <= {MAX_EXACT_N}")
    pop = build_population(config)
    P, Q = exact_mixture(pop.inp.counts, pop.inp.w)
    epsilons = config.eps_grid.values() if config.eps_grid else ORACLE_EPSILONS
    rows, ok = [], True
    for e in epsilons:
        bound = delta_s(pop.inp, float(e))
        hs = hockey_stick(P, Q, float(e))
        valid = bound.delta >= hs - ORACLE_SLACK
        ok &= valid
        rows.append({"epsilon_s": float(e), "delta_s": bound.delta, "oracle_delta": hs,
                     "valid": str(valid).lower(), "n": config.n, "seed": config.seed})
    meta = config.describe()
    meta.update(epsilon1=repr(pop.epsilon1), delta1=repr(pop.delta1), p1=repr(pop.probs.p1))
    _write(Table(rows, ("epsilon_s", "delta_s", "oracle_delta", "valid", "n", "seed"), meta), args)
    if not ok:
        print("oracle check failed: delta_s below the exact divergence", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


COMMANDS = {
    "curve": _cmd_curve,
    "inverse": _cmd_inverse,
    "clone-prob": _cmd_clone_prob,
    "oracle-check": _cmd_oracle_check,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CalibrationError, OracleLimitError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError, ZeroDivisionError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
