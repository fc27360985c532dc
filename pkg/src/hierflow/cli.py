"""Command-line front end.

Subcommands::

    hierflow run SCENARIO... [--out-dir DIR] [--jobs N]
    hierflow check-h1 --psi {sqdist,indicator} --beta LAW
    hierflow check-h2 (--beta LAW | --eps LAW) --k K
    hierflow rescale --beta LAW --t T [--t T ...]
    hierflow dd-demo [--n N --split S --alpha A --iters K --sweeps M]
    hierflow game-demo [--iters K --alpha A --nu V --p P --seed S]

Exit status: 0 on success, 1 on invalid input, 2 on numerical failure.
"""
from __future__ import annotations

import argparse
from concurrent.futures import ProcessPoolExecutor
import os
import sys

import numpy as np

from . import __version__
from .convex import IndicatorAffine, SqDistToAffine
from .integrator import StepError, run
from .kv import KVError, format_number
from .report import TagError, summarize
from .scenario import ScenarioError, build_problem, parse_scenario
from .schedules import (
    BETA,
    EPSILON,
    QuadratureError,
    h1_check,
    h2_check,
    h2_eps_check,
    parse_schedule,
    rescale_to_eps,
)
from .solvers import (
    LimitError,
    best_response_run,
    dd_assemble,
    dd_run,
    demo_game,
    power_sequence,
    solve_limit,
    vi_solution,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2
NUMERIC_ERRORS = (StepError, LimitError, QuadratureError, ArithmeticError, np.linalg.LinAlgError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def csv_header(dim, probes):
    cols = ["t"] + [f"x_{i}" for i in range(dim)]
    cols += ["phi", "psi", "beta", "beta_psi", "e1", "e2"]
    cols += [f"hz_{j}" for j in range(probes)]
    cols += [f"xmean_{i}" for i in range(dim)]
    cols += ["cum_beta_psi", "step_norm"]
    return cols


def trajectory_csv(traj):
    """CSV text of a trajectory; floats in shortest round-trip form."""
    cols = [traj.times[:, None], traj.states, traj.phi[:, None], traj.psi[:, None],
            traj.beta[:, None], traj.beta_psi[:, None], traj.e1[:, None], traj.e2[:, None],
            traj.hz, traj.ergodic_mean, traj.cum_beta_psi[:, None], traj.step_norm[:, None]]
    table = np.hstack(cols)
    lines = [",".join(csv_header(traj.dim, traj.hz.shape[1]))]
    for row in table:
        lines.append(",".join(format_number(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def oracle_point(sc, problem):
    if sc.oracle == "limit":
        return solve_limit(problem.phi, problem.psi).x
    if sc.oracle == "vi":
        return vi_solution(problem.op, problem.psi)
    return None


def run_scenario(sc, out_dir="."):
    """Integrate a scenario and write its CSV and report; returns ``(traj, report)``."""
    problem = build_problem(sc)
    traj = run(problem, np.array(sc.x0), sc.t_end, sc.h, [np.array(p) for p in sc.probes], sc.theta)
    table = []
    if sc.refinements:
        table.append((sc.h, traj.states[-1]))
        for r in range(1, sc.refinements + 1):
            h = sc.h / 2 ** r
            table.append((h, run(problem, np.array(sc.x0), sc.t_end, h, (), sc.theta).states[-1]))
    rep = summarize(traj, oracle_point(sc, problem), sc.tags, table)
    csv_path = os.path.join(out_dir, sc.csv)
    rep_path = os.path.join(out_dir, sc.report)
    for path, text in ((csv_path, trajectory_csv(traj)), (rep_path, rep.dumps())):
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return traj, rep


def _run_one(path, out_dir):
    """Worker: returns ``(exit code, message)``."""
    try:
        with open(path, encoding="utf-8") as fh:
            sc = parse_scenario(fh.read())
    except OSError as exc:
        return EXIT_INPUT, f"{path}: {exc}"
    except KVError as exc:
        return EXIT_INPUT, "\n".join(f"{path}: {d}" for d in exc.diagnostics)
    try:
        run_scenario(sc, out_dir)
    except TagError as exc:
        return EXIT_INPUT, f"{path}: {exc}"
    except NUMERIC_ERRORS as exc:
        return EXIT_NUMERIC, f"{path}: numerical failure: {exc}"
    except ValueError as exc:
        return EXIT_INPUT, f"{path}: {exc}"
    return EXIT_OK, ""


def cmd_run(args):
    if args.jobs < 1:
        print("error: --jobs must be positive", file=sys.stderr)
        return EXIT_INPUT
    if args.jobs == 1 or len(args.scenarios) == 1:
        results = [_run_one(p, args.out_dir) for p in args.scenarios]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, args.scenarios, [args.out_dir] * len(args.scenarios)))
    code = EXIT_OK
    for status, msg in results:
        if msg:
            print(msg, file=sys.stderr)
        code = max(code, status)
    return code


# ---------------------------------------------------------------------------
# schedule audits
# ---------------------------------------------------------------------------


def _schedule(text, direction=BETA):
    try:
        return parse_schedule(text, direction)
    except ValueError as exc:
        raise _InputError(str(exc)) from None


class _InputError(ValueError):
    pass


def cmd_check_h1(args):
    beta = _schedule(args.beta)
    # penalty on the real line with C = {0}; every p lies in the normal cone range
    A, b = np.ones((1, 1)), np.zeros(1)
    psi = SqDistToAffine(A, b) if args.psi == "sqdist" else IndicatorAffine(A, b)
    ps = [np.array([p]) for p in args.p]
    verdicts = h1_check(psi, ps, beta, horizon=args.horizon, tail_window=args.tail_window)
    statuses = {v.status for v in verdicts}
    overall = next(s for s in ("Divergent", "Inconclusive", "Finite") if s in statuses)
    print(overall)
    for p, v in zip(args.p, verdicts):
        print(f"p={format_number(p)} {v.status} partial_integral={format_number(v.partial_integral)} "
              f"tail_exponent={format_number(v.tail_exponent_estimate)}")
    return EXIT_OK


def cmd_check_h2(args):
    if (args.beta is None) == (args.eps is None):
        raise _InputError("give exactly one of --beta or --eps")
    if args.beta is not None:
        ok = h2_check(_schedule(args.beta), args.k, args.t0, args.horizon)
        label = "beta"
    else:
        ok = h2_eps_check(_schedule(args.eps, EPSILON), args.k, args.horizon)
        label = "epsilon"
    print(f"{'holds' if ok else 'fails'} form={label} k={format_number(args.k)}")
    return EXIT_OK


def cmd_rescale(args):
    beta = _schedule(args.beta)
    print("t,t_beta,eps,eps_times_beta")
    for t in args.t:
        if t < 0:
            raise _InputError("--t must be nonnegative")
        tb, eps = rescale_to_eps(beta, t)
        prod = eps * float(beta.value(tb))
        print(",".join(format_number(v) for v in (t, tb, eps, prod)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# demos
# ---------------------------------------------------------------------------


def _checkpoints(iters):
    ks = {0, iters - 1}
    k = 1
    while k < iters:
        ks.add(k - 1)
        k *= 2
    return sorted(ks)


def cmd_dd_demo(args):
    try:
        cp = dd_assemble(args.n, args.split, lambda x: 1.0)
    except ValueError as exc:
        raise _InputError(str(exc)) from None
    res = dd_run(cp, args.alpha, lambda m: power_sequence(m, args.beta0, args.p), args.iters, args.sweeps)
    x = cp.nodes
    exact = x * (1.0 - x) / 2.0
    print("k,beta,jump,error")
    for k in _checkpoints(args.iters):
        print(",".join([str(k + 1)] + [format_number(v) for v in (res.betas[k], res.jumps[k], res.errors[k])]))
    glued = cp.glue(res.u1, res.u2)
    print(f"analytic_error,{format_number(float(np.max(np.abs(glued - exact))))}")
    return EXIT_OK


def cmd_game_demo(args):
    game = demo_game(args.seed, alpha=args.alpha, nu=args.nu, p=args.p)
    res = best_response_run(game, np.zeros(2), np.zeros(2), args.iters)
    print("k,beta,nash_gap,residual")
    for k in _checkpoints(args.iters):
        print(",".join([str(k + 1)] + [format_number(v) for v in
                                       (res.betas[k], res.nash_gap[k + 1], res.residual[k + 1])]))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="hierflow", description="Multiscale gradient flows with growing penalties.")
    p.add_argument("--version", action="version", version=f"hierflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="integrate scenario files")
    r.add_argument("scenarios", nargs="+")
    r.add_argument("--out-dir", default=".")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_run)

    h1 = sub.add_parser("check-h1", help="audit the integrability hypothesis of a penalty schedule")
    h1.add_argument("--psi", choices=("sqdist", "indicator"), default="sqdist")
    h1.add_argument("--beta", required=True)
    h1.add_argument("--p", type=float, action="append", default=None)
    h1.add_argument("--horizon", type=float, default=1000.0)
    h1.add_argument("--tail-window", type=float, default=100.0)
    h1.set_defaults(func=cmd_check_h1)

    h2 = sub.add_parser("check-h2", help="audit the growth hypothesis of a schedule")
    h2.add_argument("--beta")
    h2.add_argument("--eps")
    h2.add_argument("--k", type=float, required=True)
    h2.add_argument("--t0", type=float, default=0.0)
    h2.add_argument("--horizon", type=float, default=100.0)
    h2.set_defaults(func=cmd_check_h2)

    rs = sub.add_parser("rescale", help="tabulate the matched time change and control")
    rs.add_argument("--beta", required=True)
    rs.add_argument("--t", type=float, action="append", required=True)
    rs.set_defaults(func=cmd_rescale)

    dd = sub.add_parser("dd-demo", help="domain decomposition on the unit interval")
    dd.add_argument("--n", type=int, default=101)
    dd.add_argument("--split", type=int, default=50)
    dd.add_argument("--alpha", type=float, default=1.0)
    dd.add_argument("--beta0", type=float, default=1.0)
    dd.add_argument("--p", type=float, default=2.0)
    dd.add_argument("--iters", type=int, default=10000)
    dd.add_argument("--sweeps", type=int, default=10)
    dd.set_defaults(func=cmd_dd_demo)

    gm = sub.add_parser("game-demo", help="best replies in a two-player team game")
    gm.add_argument("--iters", type=int, default=200)
    gm.add_argument("--alpha", type=float, default=1.0)
    gm.add_argument("--nu", type=float, default=1.0)
    gm.add_argument("--p", type=float, default=2.0)
    gm.add_argument("--seed", type=int, default=0)
    gm.set_defaults(func=cmd_game_demo)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors, --help and --version
        return exc.code
    if getattr(args, "p", None) is None and args.command == "check-h1":
        args.p = [1.0, -1.0]
    try:
        return args.func(args)
    except (_InputError, TagError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
