"""Acceptance criteria at their stated tolerances.

Each test records one ``PASS``/``FAIL`` line (shown in the terminal summary
and printed directly when run as a script).  Criteria 6 and 8 are not
reachable with the prescribed schedules; they are marked as strict expected
failures and a companion test pins the behaviour that is reachable.
"""
import math

import numpy as np
import pytest

from hierflow import cli, convex as cx
from hierflow.integrator import GradientProblem, convergence_report, refinement_study, run
from hierflow.scenario import build_problem
from hierflow.schedules import EPSILON, PowerLaw, RescaledEpsilon, h1_check
from hierflow.solvers import (
    best_response_run, dd_assemble, dd_run, demo_game, power_sequence, vi_solution,
)
from tests import conftest
from tests.conftest import SCENARIOS, load_scenario
from tests.test_convex import PROPERTIES, VARIANTS, violations

# Frozen oracle values (SLSQP and dense KKT solves, computed outside the package)
X_STAR = np.array([1.5341123416697122, 0.08273376152647563, 0.28525386580005163,
                   0.4674420965931214, 0.4642172923096783])
PHI_STAR = 1.4040935594757975
VI_STAR = np.array([-1.0644116012798466, 0.0523412797079683, 0.5709781340861022, 1.2072132406013685])
TEAM_STAR = np.array([0.2631471115445236, 0.042507317305574624, 0.2631471115445236, 0.042507317305574624])


def verdict(number, title, checks):
    """Record the line for criterion ``number`` and fail on any violated check.

    ``checks`` is a list of ``(label, value, ok)``.
    """
    ok = all(c for _, _, c in checks)
    detail = "; ".join(f"{label}={value:.3e}" if isinstance(value, float) else f"{label}={value}"
                       for label, value, _ in checks)
    line = f"{'PASS' if ok else 'FAIL'} {number} {title}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    bad = [label for label, _, c in checks if not c]
    assert ok, f"criterion {number} violated: {', '.join(bad)}"


@pytest.fixture(scope="module")
def hier_runs(hier_problem):
    x0 = np.zeros(5)
    return run(hier_problem, x0, 200.0, 1e-2), run(hier_problem, x0, 400.0, 1e-2)


def test_criterion_01_hierarchical_convergence(hier_runs):
    tr, _ = hier_runs
    d = float(np.linalg.norm(tr.states[-1] - X_STAR))
    verdict(1, "hierarchical convergence", [("distance", d, d <= 1e-3)])


def test_criterion_02_minimizing_properties(hier_runs):
    tr, long = hier_runs
    psi_end = float(tr.psi[-1])
    ratio = float(tr.beta_psi[-1] / tr.beta_psi[0])
    growth = float((long.cum_beta_psi[-1] - tr.cum_beta_psi[-1]) / tr.cum_beta_psi[-1])
    verdict(2, "minimizing properties", [
        ("psi", psi_end, psi_end <= 1e-6),
        ("beta_psi_ratio", ratio, ratio <= 1e-3),
        ("cum_growth", growth, growth <= 0.1),
    ])


def test_criterion_03_energy_limits(hier_runs):
    tr, _ = hier_runs
    e1 = float(tr.e1[-1])
    e2_gap = abs(float(tr.e2[-1]) - PHI_STAR)
    verdict(3, "energy limits", [
        ("e1", e1, e1 <= 1e-3 * (1 + abs(float(tr.e1[0])))),
        ("e2_gap", e2_gap, e2_gap <= 1e-3 * (1 + abs(PHI_STAR))),
    ])


def test_criterion_04_h1_verdicts():
    # C = {0} on the real line; every p is in the range of the normal cone
    A, b = np.ones((1, 1)), np.zeros(1)
    sqdist, indicator = cx.SqDistToAffine(A, b), cx.IndicatorAffine(A, b)
    cases = [("sqdist beta=(1+t)^2", sqdist, PowerLaw(1.0, 2.0)),
             ("sqdist beta=(1+t)", sqdist, PowerLaw(1.0, 1.0)),
             ("indicator beta=(1+t)^2", indicator, PowerLaw(1.0, 2.0))]
    checks = []
    for label, psi, beta in cases:
        got = {v.status for v in h1_check(psi, [np.array([1.0]), np.array([-2.0])], beta)}
        # for psi = dist^2/2 the integrand is p^2 / (2 beta): finite iff int 1/beta is finite
        if psi is indicator:
            expected = "Finite"
        else:
            expected = "Finite" if beta.p > 1 else "Divergent"
        checks.append((label, "/".join(sorted(got)), got == {expected}))
    verdict(4, "integrability verdicts", checks)


def test_criterion_05_ergodic_only():
    sc = load_scenario("rotation.scn")
    tr = run(build_problem(sc), np.array(sc.x0), 100.0, 1e-3, theta=sc.theta)
    norm = float(np.linalg.norm(tr.states[-1]))
    mean = float(np.linalg.norm(tr.ergodic_mean[-1]))
    v = convergence_report(tr).verdict
    verdict(5, "ergodic-only regime", [
        ("norm", norm, 0.99 <= norm <= 1.0),
        ("ergodic_norm", mean, mean <= 0.05),
        ("verdict", v, v == "ergodic-only"),
    ])


@pytest.fixture(scope="module")
def strong_run():
    sc = load_scenario("strong_monotone.scn")
    prob = build_problem(sc)
    return prob, run(prob, np.array(sc.x0), 50.0, 1e-2)


@pytest.mark.xfail(strict=True, reason="the penalty bias at t=50 is about 1e-3 for beta=(1+t)^2")
def test_criterion_06_strong_monotonicity(strong_run):
    prob, tr = strong_run
    assert np.allclose(vi_solution(prob.op, prob.psi), VI_STAR, atol=1e-10)
    d = float(np.linalg.norm(tr.states[-1] - VI_STAR))
    verdict(6, "strong monotonicity", [("distance", d, d <= 1e-4)])


def test_criterion_06_companion_penalty_bias(strong_run):
    # the gap is the penalised equilibrium's bias (M + beta R)^{-1} v, of order 1/beta
    prob, tr = strong_run
    M, q = prob.op.affine_form()
    R, c, _ = prob.psi.quadratic_form()
    b_end = float(tr.beta[-1])
    x_pen = np.linalg.solve(M + b_end * R, -q - b_end * c)
    assert np.linalg.norm(tr.states[-1] - x_pen) < 0.05 * np.linalg.norm(x_pen - VI_STAR)
    longer = run(prob, np.zeros(4), 500.0, 5e-2)
    assert np.linalg.norm(longer.states[-1] - VI_STAR) <= 1e-4


def _dictionary_gap(problem, h, t_eps_end=72.0, checkpoints=20):
    beta = problem.schedule
    eps_problem = GradientProblem(problem.phi, problem.psi, RescaledEpsilon(beta), EPSILON)
    tr_eps = run(eps_problem, np.zeros(5), t_eps_end, h)
    ck = t_eps_end * np.arange(1, checkpoints + 1) / checkpoints
    tb = (1.0 + 3.0 * ck) ** (1.0 / 3.0) - 1.0  # closed-form inverse clock for (1+t)^2
    t_beta_end = math.ceil(tb[-1] / h - 1e-9) * h
    tr_beta = run(problem, np.zeros(5), t_beta_end, h)
    xb = np.column_stack([np.interp(tb, tr_beta.times, tr_beta.states[:, i]) for i in range(5)])
    xe = tr_eps.states[np.rint(ck / h).astype(int)]
    return float(np.max(np.linalg.norm(xb - xe, axis=1)))


def test_criterion_07_dictionary(hier_problem):
    coarse = _dictionary_gap(hier_problem, 1e-2)
    refined = _dictionary_gap(hier_problem, 5e-3)
    verdict(7, "dictionary", [("gap_h=1e-2", coarse, True), ("gap_h=5e-3", refined, refined <= 1e-3)])


@pytest.mark.xfail(strict=True, reason="with beta_k=(1+k)^2 the alternating scheme freezes at a gap near 0.04")
def test_criterion_08_best_response():
    res = best_response_run(demo_game(0), np.zeros(2), np.zeros(2), 200)
    assert np.allclose(res.limit.x, TEAM_STAR, atol=1e-12)
    gap, resid = float(res.nash_gap[-1]), float(res.residual[-1])
    verdict(8, "best response", [("nash_gap", gap, gap <= 1e-3), ("residual", resid, resid <= 1e-4)])


def test_criterion_08_companion_linear_penalty():
    # with beta_k = 1 + k the gap keeps shrinking like 1/k
    gaps = [best_response_run(demo_game(0, p=1.0), np.zeros(2), np.zeros(2), n).nash_gap[-1]
            for n in (200, 2000)]
    assert gaps[1] < 0.2 * gaps[0]
    frozen = best_response_run(demo_game(0), np.zeros(2), np.zeros(2), 2000).nash_gap
    assert abs(frozen[-1] - frozen[200]) < 0.01 * frozen[200]


def test_criterion_09_domain_decomposition():
    cp = dd_assemble(101, 50, lambda x: 1.0)
    res = dd_run(cp, 1.0, lambda m: power_sequence(m, 1.0, 2.0), 10_000, sweeps=10)
    x = cp.nodes
    analytic = float(np.max(np.abs(cp.glue(res.u1, res.u2) - x * (1 - x) / 2)))
    err, jump = float(res.errors[-1]), abs(float(res.jumps[-1]))
    verdict(9, "domain decomposition", [
        ("monolithic_error", err, err <= 1e-6),
        ("analytic_error", analytic, analytic <= 1e-3),
        ("jump", jump, jump <= 1e-8),
    ])


def test_criterion_10_property_suites():
    counted = {(n, p): violations(n, p) for n in VARIANTS for p in PROPERTIES}
    applied = {k: v for k, v in counted.items() if v is not None}
    total = sum(applied.values())
    verdict(10, "convex-kit property suites", [
        ("checks", len(applied), True), ("violations", total, total == 0)])


def test_criterion_11_refinement_order(hier_problem):
    xs = refinement_study(hier_problem, np.zeros(5), 200.0, [4e-2, 2e-2, 1e-2])
    # three-level Richardson limit for an error expansion c1 h + c2 h^2
    limit = (8 * xs[2] - 6 * xs[1] + xs[0]) / 3
    err = np.linalg.norm(xs - limit, axis=1)
    r1, r2 = float(err[1] / err[0]), float(err[2] / err[1])
    verdict(11, "grid-refinement order", [
        ("ratio_2e-2", r1, 0.4 <= r1 <= 0.6), ("ratio_1e-2", r2, 0.4 <= r2 <= 0.6)])


def test_criterion_12_determinism(tmp_path):
    names = sorted(p.name for p in SCENARIOS.glob("*.scn"))
    differing = []
    for name in names:
        outs = []
        for rep in ("a", "b"):
            d = tmp_path / rep
            assert cli.main(["run", str(SCENARIOS / name), "--out-dir", str(d)]) == 0
            sc = load_scenario(name)
            outs.append(((d / sc.csv).read_bytes(), (d / sc.report).read_bytes()))
        if outs[0] != outs[1]:
            differing.append(name)
    verdict(12, "determinism", [("scenarios", len(names), True), ("differing", len(differing), not differing)])


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
