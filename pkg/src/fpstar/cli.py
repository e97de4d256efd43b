"""Command-line interface: ``fpstar {solve,example,table,verify,profiles}``.

Exit codes: 0 success, 2 solver nonconvergence (or a failed check), 3 invalid
input.  CSV goes to ``--out`` or standard output; diagnostics go to
standard error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .expr import ExprSyntaxError
from .kkt import SolverConfig
from .problem import ProblemError, builtin_example, load_problem
from .report import (DEFAULT_TIMES, SOLVERS, emit_profiles, format_table, solve_problem,
                     summary_csv, table_csv)
from .state import Discretization, SchemeError
from .verify import SUITES, run_suite

EXIT_OK = 0
EXIT_NONCONVERGED = 2
EXIT_INVALID = 3

log = logging.getLogger("fpstar")


class InputError(Exception):
    """Invalid command-line input."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return v


def _add_solver_flags(p):
    p.add_argument("--J1", type=_positive_int, default=2, help="dilation level in x (default 2)")
    p.add_argument("--J2", type=_positive_int, default=2, help="dilation level in t (default 2)")
    p.add_argument("--M1", type=_positive_int, default=4, help="polynomials per cell in x (default 4)")
    p.add_argument("--M2", type=_positive_int, default=4, help="polynomials per cell in t (default 4)")
    p.add_argument("--solver", choices=SOLVERS, default="newton")
    p.add_argument("--tol", type=float, default=1e-12, help="residual (Newton) or control-change (sweep) tolerance")
    p.add_argument("--max-iter", type=int, default=50, help="Newton iteration cap")
    p.add_argument("--omega", type=float, default=0.7, help="sweep relaxation in (0, 1]")
    p.add_argument("--sweep-max-iter", type=int, default=500)
    p.add_argument("--jacobian", choices=("analytic", "fd"), default="analytic")
    p.add_argument("--initial", choices=("consistent", "zeros"), default="consistent",
                   help="Newton starting point")
    p.add_argument("--multistart", type=_positive_int, default=1, help="number of starting points")
    p.add_argument("--seed", type=int, default=0, help="seed for multi-start perturbations")


def _config(args) -> SolverConfig:
    try:
        return SolverConfig(tol=args.tol, max_iter=args.max_iter, omega=args.omega,
                            sweep_max_iter=args.sweep_max_iter, jacobian=args.jacobian,
                            initial=args.initial)
    except ValueError as err:
        raise InputError(str(err)) from None


def _emit(text: str, out):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def _report_status(rep) -> int:
    if rep.converged:
        log.info("converged in %d iterations, residual %.3e, sigma %.6e", rep.iterations,
                 rep.final_residual, rep.sigma)
        return EXIT_OK
    log.error("not converged: %s", rep.message)
    return EXIT_NONCONVERGED


def _solve_and_report(problem, args) -> int:
    disc = Discretization.make(args.J1, args.J2, args.M1, args.M2)
    sol, rep = solve_problem(problem, disc, args.solver, _config(args), args.multistart, args.seed)
    if args.multistart > 1:
        log.info("distinct converged costs: %s", ", ".join(f"{c:.6e}" for c in rep.costs) or "none")
    _emit(summary_csv([rep]), args.out)
    if getattr(args, "profiles_dir", None):
        paths = emit_profiles(sol, args.times, args.profiles_dir)
        log.info("wrote %d profile files to %s", len(paths), args.profiles_dir)
    return _report_status(rep)


def cmd_solve(args) -> int:
    return _solve_and_report(load_problem(args.problem), args)


def cmd_example(args) -> int:
    return _solve_and_report(builtin_example(args.id), args)


def cmd_table(args) -> int:
    from .report import table_sweep

    rows = table_sweep(args.id, args.J, args.M, args.solver, _config(args))
    print(format_table(rows), file=sys.stderr)
    _emit(table_csv(rows), args.out)
    return EXIT_OK if all(r.converged for r in rows) else EXIT_NONCONVERGED


def cmd_profiles(args) -> int:
    problem = load_problem(args.problem) if args.problem else builtin_example(args.id)
    for t in args.times:
        if not 0.0 <= t <= problem.T:
            raise InputError(f"profile time {t} outside [0, {problem.T}]")
    disc = Discretization.make(args.J1, args.J2, args.M1, args.M2)
    sol, rep = solve_problem(problem, disc, args.solver, _config(args), args.multistart, args.seed)
    paths = emit_profiles(sol, args.times, args.outdir, prefix=args.prefix)
    for p in paths:
        print(p)
    return _report_status(rep)


def cmd_verify(args) -> int:
    checks, wall = run_suite(args.suite)
    for c in checks:
        print(c.line())
    failed = sum(not c.ok for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed in {wall:.1f} s")
    return EXIT_OK if failed == 0 else EXIT_NONCONVERGED


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fpstar", description="Optimal control of Fokker-Planck equations on star graphs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve a problem given as a JSON file")
    p.add_argument("--problem", required=True, help="JSON problem file")
    _add_solver_flags(p)
    p.add_argument("--out", help="summary CSV path (default: stdout)")
    p.add_argument("--profiles-dir", help="also write profile CSVs here")
    p.add_argument("--times", type=float, nargs="*", default=list(DEFAULT_TIMES))
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("example", help="solve a built-in example")
    p.add_argument("--id", type=int, choices=(1, 2), required=True)
    _add_solver_flags(p)
    p.add_argument("--out", help="summary CSV path (default: stdout)")
    p.add_argument("--profiles-dir", help="also write profile CSVs here")
    p.add_argument("--times", type=float, nargs="*", default=list(DEFAULT_TIMES))
    p.set_defaults(func=cmd_example)

    p = sub.add_parser("table", help="error/cost table over J1 x J2 for a built-in example")
    p.add_argument("--id", type=int, choices=(1, 2), required=True)
    p.add_argument("--J", type=_positive_int, nargs="+", required=True, help="dilation levels")
    p.add_argument("--M", type=_positive_int, default=4)
    _add_solver_flags(p)
    p.add_argument("--out", help="table CSV path (default: stdout)")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("profiles", help="write state/control profiles at given times")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--id", type=int, choices=(1, 2))
    src.add_argument("--problem", help="JSON problem file")
    _add_solver_flags(p)
    p.add_argument("--times", type=float, nargs="*", default=list(DEFAULT_TIMES),
                   help="physical times (default 0.075 0.975)")
    p.add_argument("--outdir", default="profiles")
    p.add_argument("--prefix", default="profile")
    p.set_defaults(func=cmd_profiles)

    p = sub.add_parser("verify", help="run property checks")
    p.add_argument("--suite", choices=SUITES + ("all",), default="all")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (InputError, ProblemError, ExprSyntaxError, ValueError) as err:
        print(f"fpstar: invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID
    except SchemeError as err:
        print(f"fpstar: solver failure: {err}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except OSError as err:
        print(f"fpstar: I/O error: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
