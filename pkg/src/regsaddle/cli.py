"""Command line interface: ``regsaddle {solve,spectra,bench,gen}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import spectra
from .generate import random_problem
from .ippmm import SolverOptions, solve
from .mps import InfeasibleBounds, ParseError, Unsupported, read_problem, write_mps, write_report
from .precond import PRECOND_KINDS

EXIT_OK, EXIT_ERROR, EXIT_LIMIT = 0, 1, 2
THEOREMS = ("pne", "pas", "pk", "lp")


def _positive(kind):
    def parse(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return parse


def _fraction(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
    return v


def _solver_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("solver options")
    g.add_argument("--precond", choices=PRECOND_KINDS, default="pne-chol", help="preconditioner (default: pne-chol)")
    g.add_argument("--col-density", type=_fraction, default=0.15, help="drop columns with at least this fraction of nonzeros (default: 0.15)")
    g.add_argument("--row-density", type=_fraction, default=0.25, help="sparsify rows with at least this fraction of nonzeros (default: 0.25)")
    g.add_argument("--max-drop", type=_nonneg_int, default=30, help="at most this many dense columns and rows (default: 30)")
    g.add_argument("--kappa", type=_positive(float), default=1.0, help="non-basic threshold multiplier on mu (default: 1.0)")
    g.add_argument("--tol", type=_positive(float), default=1e-6, help="relative accuracy of the solution (default: 1e-6)")
    g.add_argument("--max-pcg", type=_positive(int), default=100, help="PCG iteration cap per system (default: 100)")
    g.add_argument("--max-minres", type=_positive(int), default=200, help="MINRES iteration cap per system (default: 200)")
    g.add_argument("--max-ipm-iters", type=_positive(int), default=100, help="interior point iteration cap (default: 100)")
    g.add_argument("--reg-floor", type=_positive(float), default=1e-10, help="smallest regularization value (default: 1e-10)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regsaddle", description="Interior point LP/QP solver with sparsified saddle-point preconditioners.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more output (repeat for Krylov iterations)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one MPS/QPS file")
    p.add_argument("--input", required=True, type=Path, help="MPS or QPS file")
    p.add_argument("--output", type=Path, help="CSV report path (default: standard output)")
    _solver_flags(p)

    p = sub.add_parser("bench", help="solve every MPS/QPS file in a directory, one CSV row each")
    p.add_argument("--input", required=True, type=Path, help="directory of .mps/.qps files (sorted by name)")
    p.add_argument("--output", type=Path, help="CSV report path (default: standard output)")
    _solver_flags(p)

    p = sub.add_parser("spectra", help="check eigenvalue enclosures on random dense instances")
    p.add_argument("--theorem", choices=THEOREMS + ("all",), default="all", help="which enclosure to check (default: all)")
    p.add_argument("--seeds", type=_positive(int), default=30, help="number of random seeds (default: 30)")
    p.add_argument("--seed", type=int, default=0, help="first seed (default: 0)")
    p.add_argument("--m", type=_positive(int), default=15, help="rows (default: 15)")
    p.add_argument("--n", type=_positive(int), default=30, help="columns (default: 30)")
    p.add_argument("--kc", type=_nonneg_int, help="dropped columns (default: sweep 0..3)")
    p.add_argument("--kr", type=_nonneg_int, help="sparsified rows (default: sweep 0..3)")
    p.add_argument("--output", type=Path, help="write all reports as CSV to this path")

    p = sub.add_parser("gen", help="write a random feasible LP/QP in MPS/QPS format")
    p.add_argument("--m", type=_positive(int), default=20, help="rows (default: 20)")
    p.add_argument("--n", type=_positive(int), default=40, help="columns (default: 40)")
    p.add_argument("--density", type=_fraction, default=0.1, help="nonzero fraction of A (default: 0.1)")
    p.add_argument("--dense-cols", type=_nonneg_int, default=0, help="fully dense columns (default: 0)")
    p.add_argument("--dense-rows", type=_nonneg_int, default=0, help="fully dense rows (default: 0)")
    p.add_argument("--qp", action="store_true", help="add a positive definite Hessian")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--output", type=Path, help="output path (default: standard output)")
    return parser


def _options(args) -> SolverOptions:
    sink = None
    if args.verbose >= 2:
        sink = lambda k, r: print(f"    krylov {k:4d}  relres {r:.3e}", file=sys.stderr)  # noqa: E731
    return SolverOptions(
        precond_kind=args.precond,
        tol=args.tol,
        max_ipm_iters=args.max_ipm_iters,
        max_pcg=args.max_pcg,
        max_minres=args.max_minres,
        col_density=args.col_density,
        row_density=args.row_density,
        max_drop=args.max_drop,
        kappa=args.kappa,
        reg_floor=args.reg_floor,
        krylov_sink=sink,
    )


def _open_out(path):
    return open(path, "w", newline="") if path else sys.stdout


def _solve_one(path: Path, opts: SolverOptions, out, header: bool) -> int:
    problem = read_problem(path)
    state, trace, status = solve(problem, opts)
    write_report(trace, state, problem, out, header=header)
    print(
        f"{problem.name}: {status} after {len(trace)} iterations, objective {problem.objective(state.x)!r}, "
        f"{trace.total_krylov} Krylov iterations ({trace.route}, {trace.precond_kind})",
        file=sys.stderr,
    )
    return EXIT_OK if status == "converged" else EXIT_LIMIT if status == "iteration_limit" else EXIT_ERROR


def run_solve(args) -> int:
    if not args.input.is_file():
        print(f"error: input file not found: {args.input}", file=sys.stderr)
        return EXIT_ERROR
    opts = _options(args)
    out = _open_out(args.output)
    try:
        return _solve_one(args.input, opts, out, True)
    finally:
        if out is not sys.stdout:
            out.close()


def run_bench(args) -> int:
    if not args.input.is_dir():
        print(f"error: not a directory: {args.input}", file=sys.stderr)
        return EXIT_ERROR
    files = sorted(p for p in args.input.iterdir() if p.suffix.lower() in (".mps", ".qps"))
    opts = _options(args)
    out = _open_out(args.output)
    worst = EXIT_OK
    try:
        for k, path in enumerate(files):
            try:
                code = _solve_one(path, opts, out, k == 0)
            except (ParseError, Unsupported, InfeasibleBounds) as exc:
                print(f"{path.name}: {exc}", file=sys.stderr)
                code = EXIT_ERROR
            worst = EXIT_ERROR if EXIT_ERROR in (worst, code) else max(worst, code)
    finally:
        if out is not sys.stdout:
            out.close()
    return worst


def run_spectra(args) -> int:
    theorems = THEOREMS if args.theorem == "all" else (args.theorem,)
    seeds = range(args.seed, args.seed + args.seeds)
    reports = []
    failed = 0
    for th in theorems:
        n_pass = n_all = 0
        for rep in spectra.sweep(th, seeds, args.m, args.n, args.kc, args.kr):
            reports.append(rep)
            n_all += 1
            n_pass += rep.passed
            if not rep.passed or args.verbose:
                print(rep.to_line())
        failed += n_all - n_pass
        print(f"{th:4s} {n_pass}/{n_all} pass")
    if args.output:
        args.output.write_text(spectra.reports_to_csv(reports))
    return EXIT_OK if failed == 0 else EXIT_ERROR


def run_gen(args) -> int:
    problem = random_problem(args.m, args.n, args.density, args.seed, args.qp, args.dense_cols, args.dense_rows)
    out = _open_out(args.output)
    try:
        write_mps(problem, out)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = os.environ.get("REGSADDLE_THREADS")
    if threads not in (None, "1"):
        print("error: REGSADDLE_THREADS must be 1 (multi-threading is not supported)", file=sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    handler = {"solve": run_solve, "bench": run_bench, "spectra": run_spectra, "gen": run_gen}[args.command]
    try:
        return handler(args)
    except (ParseError, Unsupported, InfeasibleBounds, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
