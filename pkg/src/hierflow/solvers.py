"""Reference solvers and the two applied algorithms.

* :func:`limit_solution` computes the hierarchical limit
  ``argmin {phi | argmin psi}`` (KKT or penalty continuation).
* :func:`vi_solution` solves the monotone variational inequality
  ``0 in A x + N_C(x)``.
* :func:`best_response_run` runs alternating best replies with a cost to
  change in a two-player team game.
* :func:`dd_assemble` / :func:`dd_run` implement the 1-D
  Dirichlet-Neumann style domain decomposition with a penalised jump.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from . import kernels
from .convex import (
    Affine,
    Box,
    ConvexFunction,
    LinearMap,
    Quadratic,
    Scale,
    Separable,
    Sum,
    as_point,
    build_coupling,
)

__all__ = [
    "LimitError",
    "LimitResult",
    "limit_solution",
    "solve_limit",
    "vi_solution",
    "Game",
    "BestResponseResult",
    "best_response_run",
    "power_sequence",
    "demo_game",
    "CoupledProblem",
    "DDResult",
    "dd_assemble",
    "dd_run",
    "monolithic_solve",
]

KKT_TOL = 1e-10
PENALTY_BETAS = (1e2, 1e4, 1e6, 1e8)
FEAS_TOL = 1e-8
DR_MAXITER = 200_000


class LimitError(ArithmeticError):
    """Limit problem is unbounded below, infeasible or not solvable."""


@dataclass(frozen=True, eq=False)
class LimitResult:
    x: np.ndarray
    unique: bool
    method: str
    kkt_residual: float
    feasibility: float
    solution_set: Optional[Affine] = None

    def distance(self, y):
        """Distance from ``y`` to the solution set (to ``x`` when unique)."""
        y = as_point(y, self.x.shape[0])
        if self.solution_set is None:
            return float(np.linalg.norm(y - self.x))
        return float(np.linalg.norm(y - self.solution_set.project(y)))


def _constraint_form(psi):
    s = psi.argmin_set
    if s is None:
        raise LimitError("penalty function has no computable argmin set")
    if isinstance(s, Box):
        return s, None
    return s, s.affine_form()


def _refine(K, rhs, lu):
    sol = sla.lu_solve(lu, rhs)
    for _ in range(2):
        sol = sol + sla.lu_solve(lu, rhs - K @ sol)
    return sol


def _kkt(Q, c, A, b):
    n = Q.shape[0]
    m = A.shape[0]
    if m and np.linalg.matrix_rank(A) == m:
        K = np.block([[Q, A.T], [A, np.zeros((m, m))]])
        if np.linalg.cond(K) < 1e12:
            lu = sla.lu_factor(K)
            sol = _refine(K, np.concatenate([-c, b]), lu)
            return sol[:n], True, None
    # null-space method: x = xp + N y
    xp = np.linalg.pinv(A) @ b if m else np.zeros(n)
    N = sla.null_space(A) if m else np.eye(n)
    if N.shape[1] == 0:
        return xp, True, None
    H = N.T @ Q @ N
    g = N.T @ (Q @ xp + c)
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    cut = 1e-10 * max(1.0, abs(w[-1]))
    null = w <= cut
    if not np.any(null):
        return xp - N @ np.linalg.solve(H, g), True, None
    if np.linalg.norm(V[:, null].T @ g) > 1e-9 * (1.0 + np.linalg.norm(g)):
        raise LimitError("objective is unbounded below on the constraint set")
    y = -(V[:, ~null] @ ((V[:, ~null].T @ g) / w[~null]))
    x = xp + N @ y
    rows = [N.T @ Q] if not m else [A, N.T @ Q]
    rhs = [-N.T @ c] if not m else [b, -N.T @ c]
    return x, False, Affine(np.vstack(rows), np.concatenate(rhs))


def _dr_minimize(f, g, x0, gamma, tol, maxiter=DR_MAXITER):
    """``argmin f + g`` by Douglas-Rachford; returns the ``prox_g`` iterate."""
    z = x0.copy()
    scale = max(1.0, np.linalg.norm(x0))
    for it in range(1, maxiter + 1):
        u = f.prox(gamma, z)
        v = g.prox(gamma, 2.0 * u - z)
        z = z + v - u
        if np.linalg.norm(u - v) <= tol * scale:
            return v
    raise LimitError(f"splitting did not converge in {maxiter} iterations")


def _step_scale(phi):
    """Splitting step ``1/sqrt(lmin lmax)`` of a quadratic ``phi`` (1 otherwise)."""
    q = phi.quadratic_form()
    if q is None:
        return 1.0
    w = np.linalg.eigvalsh(q[0])
    if w[-1] <= 0:
        return 1.0
    return 1.0 / math.sqrt(max(w[0], 1e-6 * w[-1]) * w[-1])


def solve_limit(phi, psi, method="auto"):
    """Minimiser of ``phi`` over ``C = argmin psi`` with solver metadata.

    ``method`` is ``"kkt"`` (quadratic ``phi``, affine ``C``), ``"penalty"``
    (continuation of ``phi + beta psi`` over ``beta = 1e2 ... 1e8`` followed
    by a feasibility polish) or ``"auto"``.
    """
    if phi.dim != psi.dim:
        raise ValueError(f"dimension mismatch: {phi.dim} vs {psi.dim}")
    C, form = _constraint_form(psi)
    q = phi.quadratic_form()
    if method == "auto":
        method = "kkt" if (q is not None and form is not None) else "penalty"
    if method == "kkt":
        if q is None or form is None:
            raise ValueError("KKT solve needs a quadratic objective and an affine constraint set")
        Q, c, _ = q
        A, b = form
        x, unique, S = _kkt(Q, c, A, b)
        res = _kkt_residual(Q, c, A, b, x)
        return LimitResult(x, unique, "kkt", res, C.residual(x), S)
    if method != "penalty":
        raise ValueError(f"unknown method {method!r}")
    return _penalty(phi, psi, C)


def _kkt_residual(Q, c, A, b, x):
    g = Q @ x + c
    if A.shape[0]:
        mu = np.linalg.lstsq(A.T, -g, rcond=None)[0]
        stat = g + A.T @ mu
        feas = A @ x - b
        return float(max(np.linalg.norm(stat), np.linalg.norm(feas)))
    return float(np.linalg.norm(g))


def _penalty(phi, psi, C):
    x = C.project(np.zeros(phi.dim))
    for beta in PENALTY_BETAS:
        f = Sum(phi, Scale(psi, beta))
        q = f.quadratic_form()
        if q is not None:
            x = np.linalg.lstsq(q[0], -q[1], rcond=None)[0]
        else:
            gamma = _step_scale(phi) if phi.quadratic_form() is not None else 1.0 / math.sqrt(beta)
            x = _dr_minimize(phi, Scale(psi, beta), x, gamma, 1e-10)
    # polish on phi + indicator of C
    x = _dr_minimize(phi, _SetIndicator(C), x, _step_scale(phi), 1e-13)
    if C.residual(x) > FEAS_TOL:
        raise LimitError(f"feasibility residual {C.residual(x):.3e} above {FEAS_TOL}")
    return LimitResult(x, True, "penalty", math.nan, C.residual(x), None)


class _SetIndicator(ConvexFunction):
    def __init__(self, s):
        self.s = s
        self.dim = s.dim

    def _eval(self, x):
        return 0.0 if self.s.contains(x) else math.inf

    def _prox(self, lam, x):
        return self.s.project(x)


def limit_solution(phi, psi):
    """The point ``argmin {phi | argmin psi}`` (minimum-norm member when not unique)."""
    return solve_limit(phi, psi).x


def vi_solution(op, C):
    """Solution of ``0 in A x + N_C(x)`` for an affine operator ``A``.

    ``C`` may be an :class:`~hierflow.convex.ArgminSet` or a penalty
    function (its argmin set is used).  Affine sets are solved exactly on
    the null space of the constraints; boxes by Douglas-Rachford.
    """
    if isinstance(C, ConvexFunction):
        C = C.argmin_set
    aff = op.affine_form()
    if aff is None:
        raise ValueError("variational inequality oracle needs an affine operator")
    M, q = aff
    n = M.shape[0]
    form = None if isinstance(C, Box) else C.affine_form()
    if form is not None:
        A, b = form
        xp = np.linalg.pinv(A) @ b if A.shape[0] else np.zeros(n)
        N = sla.null_space(A) if A.shape[0] else np.eye(n)
        if N.shape[1] == 0:
            return xp
        H = N.T @ M @ N
        if np.linalg.cond(H) > 1e12:
            raise LimitError("variational inequality is not uniquely solvable")
        return xp - N @ np.linalg.solve(H, N.T @ (M @ xp + q))
    z = C.project(np.zeros(n))
    for _ in range(DR_MAXITER):
        u = op.resolvent(1.0, z)
        v = C.project(2.0 * u - z)
        z = z + v - u
        if np.linalg.norm(u - v) <= 1e-13 * max(1.0, np.linalg.norm(z)):
            return v
    raise LimitError("variational inequality splitting did not converge")


# ---------------------------------------------------------------------------
# Best response dynamics
# ---------------------------------------------------------------------------


def power_sequence(iters, beta0=1.0, p=2.0):
    """``beta_k = beta0 (1 + k)^p`` for ``k = 0 .. iters-1``."""
    return beta0 * (1.0 + np.arange(iters)) ** p


@dataclass(frozen=True, eq=False)
class Game:
    """Two-player team game with a common coupling and a penalised constraint
    ``L1 x1 = L2 x2``."""

    f1: ConvexFunction
    f2: ConvexFunction
    L1: LinearMap
    L2: LinearMap
    coupling: Optional[Quadratic] = None
    alpha: float = 1.0
    nu: float = 1.0
    beta_seq: Callable = power_sequence

    def __post_init__(self):
        for name in ("L1", "L2"):
            v = getattr(self, name)
            if not isinstance(v, LinearMap):
                object.__setattr__(self, name, LinearMap(v))
        if self.L1.cols != self.f1.dim or self.L2.cols != self.f2.dim:
            raise ValueError("linear maps do not match the players' dimensions")
        if self.L1.rows != self.L2.rows:
            raise ValueError("linear maps must share their output space")
        if self.alpha < 0 or self.nu < 0:
            raise ValueError("costs to change must be nonnegative")
        if self.coupling is not None and self.coupling.dim != self.dim:
            raise ValueError("coupling must act on the joint space")
        Qj = self.joint.quadratic_form()
        if Qj is not None and np.linalg.eigvalsh(Qj[0])[0] < -1e-10:
            raise ValueError("joint objective is not convex")

    @property
    def d1(self):
        return self.f1.dim

    @property
    def dim(self):
        return self.f1.dim + self.f2.dim

    @property
    def joint(self):
        base = Separable([self.f1, self.f2])
        return base if self.coupling is None else Sum(base, self.coupling)

    @property
    def constraint(self):
        return build_coupling(self.L1, self.L2)

    def betas(self, iters):
        seq = np.asarray(self.beta_seq(iters), dtype=float) if callable(self.beta_seq) \
            else np.asarray(self.beta_seq, dtype=float)[:iters]
        if seq.shape[0] < iters:
            raise ValueError(f"beta sequence has only {seq.shape[0]} terms, {iters} needed")
        if np.any(seq <= 0) or np.any(np.diff(seq) <= 0):
            raise ValueError("beta sequence must be positive and strictly increasing")
        return seq


@dataclass(frozen=True, eq=False)
class BestResponseResult:
    x1: np.ndarray
    x2: np.ndarray
    betas: np.ndarray
    nash_gap: np.ndarray
    residual: np.ndarray
    objective: np.ndarray
    limit: LimitResult

    @property
    def final(self):
        return self.x1[-1], self.x2[-1]


def _block_quad(game):
    """Blocks of the joint quadratic ``(P11, P12, P21, P22, d1, d2)`` or None."""
    q = game.joint.quadratic_form()
    if q is None:
        return None
    Q, c, _ = q
    d1 = game.d1
    return Q[:d1, :d1], Q[:d1, d1:], Q[d1:, :d1], Q[d1:, d1:], c[:d1], c[d1:]


def best_response_run(game, x10, x20, iters):
    """Alternating best replies with a cost to change.

    At iteration ``k`` player 1 minimises
    ``f1(xi) + phi(xi, x2_k) + beta_k/2 |L1 xi - L2 x2_k|^2 + alpha/2 |xi - x1_k|^2``
    and then player 2 answers ``x1_{k+1}`` with ``beta_k`` and cost ``nu``.
    Records distance to the team optimum, the constraint residual and the
    penalised objective before and after each half-step.
    """
    if iters < 1:
        raise ValueError("iters must be positive")
    x1 = as_point(x10, game.d1)
    x2 = as_point(x20, game.f2.dim)
    betas = game.betas(iters)
    L1, L2 = game.L1.matrix, game.L2.matrix
    blocks = _block_quad(game)
    _check_strongly_convex(game, blocks, betas[0])
    lim = solve_limit(game.joint, game.constraint)
    psi = game.constraint
    joint = game.joint

    X1 = np.empty((iters + 1, x1.shape[0]))
    X2 = np.empty((iters + 1, x2.shape[0]))
    obj = np.empty((iters, 3))
    X1[0], X2[0] = x1, x2
    for k, b in enumerate(betas):
        obj[k, 0] = joint(np.concatenate([x1, x2])) + b * psi(np.concatenate([x1, x2]))
        if blocks is not None:
            P11, P12, P21, P22, c1, c2 = blocks
            lhs = P11 + b * L1.T @ L1 + game.alpha * np.eye(x1.shape[0])
            x1 = np.linalg.solve(lhs, -c1 - P12 @ x2 + b * L1.T @ (L2 @ x2) + game.alpha * x1)
        else:
            x1 = _half_step(game, 0, x1, x2, b)
        obj[k, 1] = joint(np.concatenate([x1, x2])) + b * psi(np.concatenate([x1, x2]))
        if blocks is not None:
            lhs = P22 + b * L2.T @ L2 + game.nu * np.eye(x2.shape[0])
            x2 = np.linalg.solve(lhs, -c2 - P21 @ x1 + b * L2.T @ (L1 @ x1) + game.nu * x2)
        else:
            x2 = _half_step(game, 1, x1, x2, b)
        obj[k, 2] = joint(np.concatenate([x1, x2])) + b * psi(np.concatenate([x1, x2]))
        X1[k + 1], X2[k + 1] = x1, x2
    joint_states = np.hstack([X1, X2])
    gap = np.array([lim.distance(z) for z in joint_states])
    resid = np.linalg.norm(X1 @ L1.T - X2 @ L2.T, axis=1)
    return BestResponseResult(X1, X2, betas, gap, resid, obj, lim)


def demo_game(seed=0, alpha=1.0, nu=1.0, p=2.0, dim=2):
    """Seeded quadratic team game on ``R^dim x R^dim`` with ``L1 = L2 = I``.

    Players have random strongly convex quadratic losses and share the
    coupling ``0.1 |C x|^2 / 2`` with a random ``C``; ``beta_k = (1+k)^p``.
    """
    rng = np.random.default_rng(seed)

    def spd():
        B = rng.standard_normal((dim, dim))
        return B @ B.T + 0.5 * np.eye(dim)

    f1 = Quadratic(spd(), rng.standard_normal(dim))
    f2 = Quadratic(spd(), rng.standard_normal(dim))
    C = rng.standard_normal((2 * dim, 2 * dim))
    coupling = Quadratic(0.1 * C @ C.T)
    return Game(f1, f2, np.eye(dim), np.eye(dim), coupling, alpha, nu,
                lambda n: power_sequence(n, 1.0, p))


def _check_strongly_convex(game, blocks, beta0):
    if blocks is None:
        if game.alpha <= 0 or game.nu <= 0:
            raise ValueError("non-quadratic players need positive costs to change")
        return
    P11, _, _, P22, _, _ = blocks
    L1, L2 = game.L1.matrix, game.L2.matrix
    for name, P, L, a in (("player 1", P11, L1, game.alpha), ("player 2", P22, L2, game.nu)):
        H = P + beta0 * L.T @ L + a * np.eye(P.shape[0])
        if np.linalg.eigvalsh(H)[0] <= 1e-12:
            raise ValueError(f"{name} half-step is not strongly convex")


def _half_step(game, player, x1, x2, beta):
    """Generic half-step as a proximal step of the player's reduced objective."""
    L1, L2 = game.L1.matrix, game.L2.matrix
    d1 = game.d1
    if player == 0:
        f, cost, own = game.f1, game.alpha, x1
        # beta/2 |L1 xi - L2 x2|^2 plus the coupling restricted to xi
        Q = beta * L1.T @ L1
        c = -beta * L1.T @ (L2 @ x2)
        if game.coupling is not None:
            Qc, cc = game.coupling.Q, game.coupling.c
            Q = Q + Qc[:d1, :d1]
            c = c + Qc[:d1, d1:] @ x2 + cc[:d1]
    else:
        f, cost, own = game.f2, game.nu, x2
        Q = beta * L2.T @ L2
        c = -beta * L2.T @ (L1 @ x1)
        if game.coupling is not None:
            Qc, cc = game.coupling.Q, game.coupling.c
            Q = Q + Qc[d1:, d1:]
            c = c + Qc[d1:, :d1] @ x1 + cc[d1:]
    Q = 0.5 * (Q + Q.T)
    smooth = Quadratic(Q, c) if np.linalg.eigvalsh(Q)[0] >= -1e-12 else None
    g = f if smooth is None else Sum(f, smooth)
    return g.prox(1.0 / cost, own)


# ---------------------------------------------------------------------------
# Domain decomposition
# ---------------------------------------------------------------------------


def _tridiag(n, scale, last_half=False, first_half=False):
    lo = np.full(n, -scale)
    up = np.full(n, -scale)
    di = np.full(n, 2.0 * scale)
    lo[0] = 0.0
    up[-1] = 0.0
    if last_half:
        di[-1] = scale
    if first_half:
        di[0] = scale
    return lo, di, up


def _dense(lo, di, up):
    return np.diag(di) + np.diag(lo[1:], -1) + np.diag(up[:-1], 1)


@dataclass(frozen=True, eq=False)
class CoupledProblem:
    """Two subdomain blocks of the 1-D Dirichlet Laplacian sharing the split node.

    Blocks are stored as (lower, diagonal, upper) bands; ``lower[i]`` couples
    unknown ``i`` to ``i-1``.  Subdomain 1 holds nodes ``1..split`` and
    subdomain 2 nodes ``split..n-1`` of the grid ``x_i = i / n``.
    """

    n: int
    split: int
    band1: tuple
    band2: tuple
    h1: np.ndarray
    h2: np.ndarray
    source: Callable

    @property
    def K1(self):
        return _dense(*self.band1)

    @property
    def K2(self):
        return _dense(*self.band2)

    @property
    def T1(self):
        row = np.zeros((1, self.split))
        row[0, -1] = 1.0
        return LinearMap(row)

    @property
    def T2(self):
        row = np.zeros((1, self.n - self.split))
        row[0, 0] = 1.0
        return LinearMap(row)

    @property
    def nodes(self):
        return np.arange(1, self.n) / self.n

    def jump(self, u1, u2):
        return float(u1[-1] - u2[0])

    def glue(self, u1, u2):
        """Interior-node vector built from the two halves (interface averaged)."""
        mid = 0.5 * (u1[-1] + u2[0])
        return np.concatenate([u1[:-1], [mid], u2[1:]])

    def split_vector(self, u):
        s = self.split
        return u[:s].copy(), u[s - 1:].copy()

    def assembled(self):
        """Global matrix and load after identifying the two interface unknowns."""
        s, n = self.split, self.n
        m = n - 1
        K = np.zeros((m, m))
        K[:s, :s] += self.K1
        K[s - 1:, s - 1:] += self.K2
        f = np.zeros(m)
        f[:s] += self.h1
        f[s - 1:] += self.h2
        return K, f


def dd_assemble(n, split, source):
    """Split the ``n``-interval finite-difference Poisson problem at node ``split``.

    Each block is ``1/dx^2`` times the second-difference stencil with the
    interface diagonal halved, and the loads are the nodal source values
    halved at the interface, so that summing the interface rows restores
    the monolithic stencil.
    """
    n, split = int(n), int(split)
    if n < 3:
        raise ValueError("grid needs at least 3 intervals")
    if not 1 < split < n - 1:
        raise ValueError(f"split must satisfy 1 < split < n-1 (got split={split}, n={n})")
    dx = 1.0 / n
    scale = 1.0 / dx ** 2
    x = np.arange(1, n) * dx
    f = np.array([float(source(v)) for v in x])
    if not np.all(np.isfinite(f)):
        raise ValueError("source must be finite on the grid")
    band1 = _tridiag(split, scale, last_half=True)
    band2 = _tridiag(n - split, scale, first_half=True)
    h1 = f[:split].copy()
    h1[-1] *= 0.5
    h2 = f[split - 1:].copy()
    h2[0] *= 0.5
    return CoupledProblem(n, split, band1, band2, h1, h2, source)


def monolithic_solve(n, source):
    """Standard ``(n-1)``-point finite-difference solve of ``-u'' = f``, ``u(0) = u(1) = 0``."""
    dx = 1.0 / n
    x = np.arange(1, n) * dx
    f = np.array([float(source(v)) for v in x])
    ab = np.zeros((3, n - 1))
    ab[0, 1:] = -1.0
    ab[1] = 2.0
    ab[2, :-1] = -1.0
    return sla.solve_banded((1, 1), ab / dx ** 2, f)


@dataclass(frozen=True, eq=False)
class DDResult:
    u1: np.ndarray
    u2: np.ndarray
    jumps: np.ndarray
    errors: np.ndarray
    betas: np.ndarray
    reference: np.ndarray


def dd_run(cp, alpha, beta_seq, iters, sweeps=1, u1=None, u2=None):
    """Alternating subdomain solves with a penalised interface jump.

    A sweep at penalty ``beta`` solves
    ``((1+alpha) K1 + beta e e^T) u1 = h1 + alpha K1 u1_k + beta u2_k[0] e``
    then the mirror problem for ``u2`` with the fresh ``u1``.  Each of the
    ``iters`` penalty levels ``beta_k`` is held for ``sweeps`` sweeps.
    Records, per level, the interface jump and the sup-norm error against
    the monolithic solve.
    """
    if iters < 1 or sweeps < 1:
        raise ValueError("iters and sweeps must be positive")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    betas = np.asarray(beta_seq(iters) if callable(beta_seq) else beta_seq, dtype=float)[:iters]
    if betas.shape[0] < iters:
        raise ValueError("beta sequence shorter than the iteration count")
    if np.any(betas <= 0) or np.any(np.diff(betas) < 0):
        raise ValueError("beta sequence must be positive and nondecreasing")
    ref = monolithic_solve(cp.n, cp.source)
    r1, r2 = cp.split_vector(ref)
    u1 = np.zeros(cp.split) if u1 is None else as_point(u1, cp.split)
    u2 = np.zeros(cp.n - cp.split) if u2 is None else as_point(u2, cp.n - cp.split)
    lo1, di1, up1 = (np.ascontiguousarray(v) for v in cp.band1)
    lo2, di2, up2 = (np.ascontiguousarray(v) for v in cp.band2)
    try:
        u1, u2, jumps, errs = kernels.dd_iterate(
            lo1, di1, up1, lo2, di2, up2,
            np.ascontiguousarray(cp.h1), np.ascontiguousarray(cp.h2),
            cp.split - 1, 0, float(alpha), np.ascontiguousarray(np.repeat(betas, sweeps)),
            u1, u2, r1, r2)
    except (ZeroDivisionError, np.linalg.LinAlgError) as exc:
        raise ArithmeticError(f"singular subdomain system: {exc}") from exc
    jumps = np.asarray(jumps)[sweeps - 1::sweeps]
    errs = np.asarray(errs)[sweeps - 1::sweeps]
    return DDResult(np.asarray(u1), np.asarray(u2), jumps, errs, betas, ref)
