import numpy as np
import pytest

from hierflow import convex as cx
from hierflow.integrator import AffineOperator
from hierflow.solvers import (
    Game, LimitError, best_response_run, dd_assemble, dd_run, demo_game, limit_solution,
    monolithic_solve, power_sequence, solve_limit, vi_solution,
)

# Frozen oracle values: scipy SLSQP and a dense KKT solve, computed outside the package.
X_STAR = np.array([1.5341123416697122, 0.08273376152647563, 0.28525386580005163,
                   0.4674420965931214, 0.4642172923096783])
PHI_STAR = 1.4040935594757975
VI_STAR = np.array([-1.0644116012798466, 0.0523412797079683, 0.5709781340861022, 1.2072132406013685])
TEAM_STAR = np.array([0.2631471115445236, 0.042507317305574624, 0.2631471115445236, 0.042507317305574624])


def test_kkt_oracle(hier_problem):
    res = solve_limit(hier_problem.phi, hier_problem.psi)
    assert res.method == "kkt" and res.unique
    assert np.allclose(res.x, X_STAR, atol=1e-9)
    assert hier_problem.phi(res.x) == pytest.approx(PHI_STAR, abs=1e-9)
    assert res.kkt_residual < 1e-10 and res.feasibility < 1e-10


def test_penalty_method_agrees_with_kkt(hier_problem):
    res = solve_limit(hier_problem.phi, hier_problem.psi, method="penalty")
    assert np.allclose(res.x, X_STAR, atol=1e-8)


def test_penalty_method_nonsmooth():
    # minimise |x|_1 on the line x1 + x2 = 1 with a quadratic tie-breaker
    phi = cx.Sum(cx.AbsoluteSum(2), cx.Quadratic(0.1 * np.eye(2)))
    psi = cx.SqDistToAffine(np.ones((1, 2)), np.ones(1))
    res = solve_limit(phi, psi)
    assert res.method == "penalty"
    assert np.allclose(res.x, [0.5, 0.5], atol=1e-7)


def test_box_constraint_penalty():
    phi = cx.Quadratic(np.eye(2), np.array([-3.0, 1.0]))
    psi = cx.SqDistToBox(np.zeros(2), np.ones(2))
    assert np.allclose(limit_solution(phi, psi), [1.0, 0.0], atol=1e-8)


def test_nonunique_limit_returns_min_norm_member():
    res = solve_limit(cx.Zero(2), cx.SqDistToAffine(np.ones((1, 2)), np.ones(1)))
    assert not res.unique
    assert np.allclose(res.x, [0.5, 0.5])
    assert res.distance([2.0, -1.0]) == pytest.approx(0.0, abs=1e-12)
    assert res.distance([1.0, 1.0]) == pytest.approx(np.sqrt(0.5))


def test_unbounded_limit_raises():
    phi = cx.Quadratic(np.zeros((2, 2)), np.array([1.0, 0.0]))
    psi = cx.SqDistToAffine(np.array([[0.0, 1.0]]), np.zeros(1))
    with pytest.raises(LimitError):
        solve_limit(phi, psi)


def test_method_validation(hier_problem):
    with pytest.raises(ValueError):
        solve_limit(hier_problem.phi, hier_problem.psi, method="simplex")
    with pytest.raises(ValueError):
        solve_limit(cx.AbsoluteSum(5), hier_problem.psi, method="kkt")


def test_vi_oracle():
    from tests.conftest import load_scenario
    from hierflow.scenario import build_problem
    prob = build_problem(load_scenario("strong_monotone.scn"))
    x = vi_solution(prob.op, prob.psi)
    assert np.allclose(x, VI_STAR, atol=1e-10)


def test_vi_on_box_by_splitting():
    op = AffineOperator(np.array([[1.0, 1.0], [-1.0, 1.0]]), np.array([-4.0, 0.0]))
    x = vi_solution(op, cx.Box(np.zeros(2), np.ones(2)))
    # check 0 in A x + N_C(x) through the projection fixed point
    assert np.allclose(np.clip(x - op.apply(x), 0, 1), x, atol=1e-10)


def test_power_sequence():
    assert np.array_equal(power_sequence(4, 2.0, 2.0), [2.0, 8.0, 18.0, 32.0])


def test_team_optimum_oracle():
    res = best_response_run(demo_game(0), np.zeros(2), np.zeros(2), 5)
    assert np.allclose(res.limit.x, TEAM_STAR, atol=1e-12)


def test_best_response_objective_never_increases():
    # each half-step minimises the penalised objective plus a nonnegative cost to change
    res = best_response_run(demo_game(0), np.zeros(2), np.zeros(2), 200)
    assert np.all(res.objective[:, 1] <= res.objective[:, 0] + 1e-12)
    assert np.all(res.objective[:, 2] <= res.objective[:, 1] + 1e-12)


def test_best_response_linear_penalty_converges():
    res = best_response_run(demo_game(0, p=1.0), np.zeros(2), np.zeros(2), 2000)
    assert res.nash_gap[-1] < 1e-3
    assert res.residual[-1] < 1e-3


def test_generic_half_step_matches_closed_form():
    g = demo_game(1)
    h = Game(cx.Translate(g.f1, np.zeros(2)), g.f2, np.eye(2), np.eye(2), g.coupling, 1.0, 1.0, g.beta_seq)
    a = best_response_run(g, np.ones(2), np.zeros(2), 20)
    b = best_response_run(h, np.ones(2), np.zeros(2), 20)
    assert np.allclose(a.x1, b.x1, atol=1e-8) and np.allclose(a.x2, b.x2, atol=1e-8)


def test_game_validation():
    f = cx.Quadratic(np.eye(2))
    with pytest.raises(ValueError):
        Game(f, f, np.eye(3), np.eye(2))
    with pytest.raises(ValueError):
        Game(f, f, np.eye(2), np.eye(2), alpha=-1.0)
    with pytest.raises(ValueError):
        best_response_run(Game(f, f, np.eye(2), np.eye(2)), np.zeros(2), np.zeros(2), 0)
    bad = Game(f, f, np.eye(2), np.eye(2), beta_seq=lambda n: np.ones(n))
    with pytest.raises(ValueError):
        best_response_run(bad, np.zeros(2), np.zeros(2), 3)


def test_dd_assembly_equals_monolithic_stencil():
    cp = dd_assemble(21, 8, lambda x: np.sin(3 * x))
    K, f = cp.assembled()
    n = 21
    T = (2 * np.eye(n - 1) - np.eye(n - 1, k=1) - np.eye(n - 1, k=-1)) * n ** 2
    assert np.allclose(K, T, rtol=0, atol=1e-9)
    assert np.allclose(f, np.sin(3 * np.arange(1, n) / n))


def test_monolithic_solve_against_dense():
    n = 30
    T = (2 * np.eye(n - 1) - np.eye(n - 1, k=1) - np.eye(n - 1, k=-1)) * n ** 2
    x = np.arange(1, n) / n
    assert np.allclose(monolithic_solve(n, np.exp), np.linalg.solve(T, np.exp(x)), atol=1e-13)
    # the stencil is exact on quadratics
    assert np.allclose(monolithic_solve(n, lambda s: 1.0), x * (1 - x) / 2, atol=1e-13)


def test_dd_errors_decrease_and_jump_closes():
    cp = dd_assemble(41, 20, lambda x: 1.0)
    res = dd_run(cp, 1.0, lambda m: power_sequence(m, 1.0, 2.0), 2000, sweeps=10)
    assert res.errors[-1] < 1e-6
    # at a fixed penalty the jump settles at about flux / beta
    assert abs(res.jumps[-1]) < 1e-6
    assert res.errors[-1] < res.errors[10]


def test_dd_validation():
    with pytest.raises(ValueError):
        dd_assemble(10, 9, lambda x: 1.0)
    with pytest.raises(ValueError):
        dd_assemble(10, 5, lambda x: np.inf)
    cp = dd_assemble(10, 5, lambda x: 1.0)
    with pytest.raises(ValueError):
        dd_run(cp, 1.0, lambda m: -np.ones(m), 3)
    with pytest.raises(ValueError):
        dd_run(cp, 1.0, lambda m: np.ones(m), 3, sweeps=0)
