"""Command-line interface: ``daeflate analyze|reduce|solve|check``.

Exit codes: 0 success, 1 usage or schema error, 2 the pencil is not regular
(or a step is not geometrically regular), 3 a residual check failed.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .deflate_ltv import LtvChain
from .errors import DaeflateError, NotRegular, ProblemError
from .linalg import BACKENDS, kronecker_index_oracle
from .problem import (
    ProblemFile,
    build_chain,
    dumps,
    effective_tol,
    forcing_description,
    load_problem,
    reduced_initial,
    write_chain,
)
from .solve import SolutionTrajectory, residual_check, solve_chain

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_REGULAR = 2
EXIT_RESIDUAL = 3


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _count(minimum: int):
    def parse(text: str) -> int:
        value = int(text)
        if value < minimum:
            raise argparse.ArgumentTypeError(f"must be at least {minimum}")
        return value

    return parse


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",") if x.strip()])
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("problem", help="problem file (JSON)")
    common.add_argument("--tol", type=_positive_float, help="rank tolerance (default: DAEFLATE_TOL or 1e-10)")
    common.add_argument("--backend", choices=BACKENDS, help="rank-revealing factorization for constant problems")
    common.add_argument("--probes", type=_count(1), help="number of equispaced probe points (time-varying problems)")

    parser = argparse.ArgumentParser(prog="daeflate", description="Index reduction of linear DAEs by deflation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="print ranks, index and constraint counts")
    p.add_argument("--json", action="store_true", help="print a JSON report instead of text")

    p = sub.add_parser("reduce", parents=[common], help="write the deflation chain as JSON")
    p.add_argument("-o", "--output", required=True, help="chain file to write")

    p = sub.add_parser("solve", parents=[common], help="integrate, back-substitute and check residuals")
    p.add_argument("--t0", type=float, help="start time (default: problem interval)")
    p.add_argument("--t1", type=float, help="end time (default: problem interval)")
    p.add_argument("--steps", type=_count(2), default=1000, help="RK4 steps (default 1000)")
    p.add_argument("--samples", type=_count(2), default=101, help="output samples (default 101)")
    p.add_argument("--x0", type=_vector, help="initial terminal values or full state, comma-separated")
    p.add_argument("--residual-tol", type=_positive_float, help="residual tolerance (default 1e-8 lti, 1e-6 ltv)")
    p.add_argument("-o", "--output", help="CSV file to write (default: standard output)")

    p = sub.add_parser("check", parents=[common], help="residuals of a trajectory CSV")
    p.add_argument("trajectory", help="CSV with columns t,x1..xn[,residual]")
    p.add_argument("--residual-tol", type=_positive_float, help="residual tolerance (default 1e-8 lti, 1e-6 ltv)")
    return parser


def _load(args) -> ProblemFile:
    problem = load_problem(args.problem)
    if args.probes is not None:
        problem = problem.with_probe_count(args.probes)
    return problem


def _variables(idx) -> list[str]:
    return [f"x{i + 1}" for i in idx]


def analyze_report(problem: ProblemFile, chain, tol: float) -> dict:
    """Data printed by ``analyze``."""
    report = {
        "name": problem.name,
        "n": problem.n,
        "mode": problem.mode,
        "rank_E": chain.ranks[1],
        "steps": chain.index,
        "ranks": list(chain.ranks),
        "rcond_N": [float(s.rcond_N) for s in chain.steps],
        "constraints": chain.constraint_count,
        "terminal_size": chain.terminal_size,
        "terminal_variables": _variables(chain.reduced_coordinates()),
        "terminal_is_ode": chain.terminal_is_ode,
        "tol": tol,
    }
    if problem.mode == "lti":
        E, A = problem.constant_matrices()
        report["index_kind"] = "kronecker"
        report["index"] = kronecker_index_oracle(E, A, tol)
        report["backend"] = chain.backend
    else:
        report["index_kind"] = "differentiation"
        report["index"] = chain.index
        report["base_point"] = chain.t0
        report["probes"] = len(chain.probes)
    return report


def format_analyze(report: dict) -> str:
    ranks = [str(r) for r in report["ranks"]]
    ranks[-1] += "-terminal"
    lines = [
        f"n={report['n']}, mode={report['mode']}" + (f" ({report['name']})" if report["name"] else ""),
        f"rank(E)={report['rank_E']}, index={report['index']}, ranks: {','.join(ranks)}",
        f"{report['index_kind']} index {report['index']}; deflation steps {report['steps']}",
    ]
    if report["rcond_N"]:
        lines.append("rcond(N) per step: " + ", ".join(f"{x:.3e}" for x in report["rcond_N"]))
    kind = "ODE" if report["terminal_is_ode"] else "algebraic"
    vars_ = ", ".join(report["terminal_variables"]) or "none"
    size = report["terminal_size"]
    lines.append(f"terminal system: {size} variable{'s' if size != 1 else ''} ({vars_}), {kind}")
    lines.append(f"constraints: {report['constraints']}")
    return "\n".join(lines)


def cmd_analyze(args) -> int:
    problem = _load(args)
    tol = effective_tol(problem, args.tol)
    chain = build_chain(problem, tol, args.backend)
    report = analyze_report(problem, chain, tol)
    print(dumps(report) if args.json else format_analyze(report))
    return EXIT_OK


def cmd_reduce(args) -> int:
    problem = _load(args)
    chain = build_chain(problem, args.tol, args.backend)
    write_chain(args.output, chain, problem)
    print(f"wrote {chain.index} step(s), {chain.constraint_count} constraint(s) to {args.output}")
    if not isinstance(chain, LtvChain):
        for j, step in enumerate(chain.steps):
            rows = forcing_description(step.h)
            print(f"step {j + 1}: {step.size_in} -> {step.size_out}, h = ({'; '.join(rows)})")
    return EXIT_OK


def _write_csv(stream, traj: SolutionTrajectory) -> None:
    n = traj.states.shape[1]
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["residual"])
    for t, x, r in zip(traj.times, traj.states, traj.residual_norms):
        w.writerow([format(v, ".17g") for v in (t, *x, r)])


def cmd_solve(args) -> int:
    problem = _load(args)
    chain = build_chain(problem, args.tol, args.backend)
    t0 = problem.interval[0] if args.t0 is None else args.t0
    t1 = problem.interval[1] if args.t1 is None else args.t1
    if not t1 > t0:
        raise ProblemError("t1", "must exceed t0")
    x0 = reduced_initial(problem, chain, args.x0)
    traj = solve_chain(chain, t0, t1, x0, args.steps, args.samples)
    E, A = problem.matrix_functions()
    tol = args.residual_tol or problem.default_residual_tol()
    report = residual_check(E, A, problem.forcing(), traj, tol)
    if args.output:
        with open(args.output, "w", newline="") as fh:
            _write_csv(fh, traj)
    else:
        _write_csv(sys.stdout, traj)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_RESIDUAL


def read_trajectory(path, n: int) -> SolutionTrajectory:
    """Read ``t,x1..xn[,residual]`` columns; extra columns beyond ``residual`` are rejected."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise ProblemError("trajectory", f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise ProblemError("trajectory", f"empty file; expected columns t,x1..x{n}")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    width = len(header)
    expected = ["t"] + [f"x{i + 1}" for i in range(n)]
    if header not in (expected, expected + ["residual"]):
        raise ProblemError("trajectory", f"expected columns t,x1..x{n}[,residual], got {','.join(header)}")
    if not body:
        raise ProblemError("trajectory", "no samples")
    try:
        data = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise ProblemError("trajectory", f"non-numeric value: {exc}") from None
    if data.shape[1] != width:
        raise ProblemError("trajectory", "rows have inconsistent column counts")
    try:
        return SolutionTrajectory(data[:, 0], data[:, 1 : n + 1])
    except ValueError as exc:
        raise ProblemError("trajectory", str(exc)) from None


def cmd_check(args) -> int:
    problem = _load(args)
    traj = read_trajectory(args.trajectory, problem.n)
    if traj.times.size < 2:
        raise ProblemError("trajectory", "need at least two samples to differentiate")
    E, A = problem.matrix_functions()
    tol = args.residual_tol or problem.default_residual_tol()
    report = residual_check(E, A, problem.forcing(), traj, tol)
    worst = int(np.argmax(report.residuals))
    print(f"samples: {traj.times.size}, worst at t={traj.times[worst]:.6g}")
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_RESIDUAL


COMMANDS = {"analyze": cmd_analyze, "reduce": cmd_reduce, "solve": cmd_solve, "check": cmd_check}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except NotRegular as exc:
        print(f"daeflate: not regular: {exc}", file=sys.stderr)
        return EXIT_NOT_REGULAR
    except (DaeflateError, ValueError) as exc:
        print(f"daeflate: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
