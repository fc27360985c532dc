"""Implicit time stepping of the multiscale gradient / monotone inclusions.

Both systems are discretised by backward Euler (a proximal step per grid
interval) with the penalty weight taken at the new time.  Quadratic data and
affine operators go through the linear kernel in :mod:`hierflow.kernels`;
everything else goes through :func:`step` / :func:`step_mami`, one proximal
sub-problem per interval.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from . import kernels
from .convex import (
    INNER_MAXITER,
    INNER_TOL,
    ConvexFunction,
    ProxConvergenceError,
    Scale,
    Sum,
    as_point,
)
from .schedules import BETA, EPSILON, Schedule

__all__ = [
    "MonotoneOperator",
    "AffineOperator",
    "Rotation2D",
    "SubdifferentialOf",
    "GradientProblem",
    "MonotoneProblem",
    "StepError",
    "StepRecord",
    "Trajectory",
    "ConvergenceReport",
    "step",
    "step_mami",
    "run",
    "ergodic_mean",
    "convergence_report",
    "refinement_study",
]

VELOCITY_TOL = 1e-6
OSCILLATION_TOL = 1e-3


# ---------------------------------------------------------------------------
# Monotone operators
# ---------------------------------------------------------------------------


class MonotoneOperator:
    dim: int

    @property
    def modulus(self):
        """Strong monotonicity modulus (0 when merely monotone)."""
        return 0.0

    def apply(self, x):
        raise NotImplementedError

    def resolvent(self, lam, x):
        """``(I + lam A)^{-1} x``."""
        raise NotImplementedError

    def affine_form(self):
        """``(M, q)`` when ``A x = M x + q``, else None."""
        return None


@dataclass(frozen=True, eq=False)
class AffineOperator(MonotoneOperator):
    """``x -> M x + q`` with ``M + M^T`` positive semidefinite."""

    M: np.ndarray
    q: np.ndarray = None

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        if M.shape[0] != M.shape[1]:
            raise ValueError("affine operator matrix must be square")
        q = np.zeros(M.shape[0]) if self.q is None else as_point(self.q, M.shape[0])
        w = np.linalg.eigvalsh(0.5 * (M + M.T))
        if w[0] < -1e-10 * max(1.0, abs(w[-1])):
            raise ValueError(f"operator is not monotone (symmetric part eigenvalue {w[0]:.3e})")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "q", q)

    @property
    def dim(self):
        return self.M.shape[0]

    @property
    def modulus(self):
        w = float(np.linalg.eigvalsh(0.5 * (self.M + self.M.T))[0])
        return w if w > 1e-12 else 0.0

    def apply(self, x):
        return self.M @ as_point(x, self.dim) + self.q

    def resolvent(self, lam, x):
        return np.linalg.solve(np.eye(self.dim) + lam * self.M, as_point(x, self.dim) - lam * self.q)

    def affine_form(self):
        return self.M, self.q


def Rotation2D(angle):
    """Planar rotation by ``angle`` (monotone for ``|angle| <= pi/2``)."""
    c, s = math.cos(angle), math.sin(angle)
    if abs(c) < 1e-15:
        c = 0.0
    return AffineOperator(np.array([[c, -s], [s, c]]))


@dataclass(frozen=True, eq=False)
class SubdifferentialOf(MonotoneOperator):
    f: ConvexFunction

    @property
    def dim(self):
        return self.f.dim

    @property
    def modulus(self):
        q = self.f.quadratic_form()
        if q is None:
            return 0.0
        w = float(np.linalg.eigvalsh(q[0])[0])
        return w if w > 1e-12 else 0.0

    def apply(self, x):
        q = self.f.quadratic_form()
        if q is None:
            raise NotImplementedError("subdifferential of a nonsmooth function is set-valued")
        return q[0] @ as_point(x, self.dim) + q[1]

    def resolvent(self, lam, x):
        return self.f.prox(lam, x)

    def affine_form(self):
        q = self.f.quadratic_form()
        return None if q is None else (q[0], q[1])


# ---------------------------------------------------------------------------
# Problems
# ---------------------------------------------------------------------------


def _check_penalty(psi, dim):
    if psi.dim != dim:
        raise ValueError(f"penalty dimension {psi.dim} != problem dimension {dim}")
    if not psi.has_argmin_set:
        raise ValueError("penalty function needs a computable argmin set")
    m = psi.min_value()
    if abs(m) > 1e-9:
        raise ValueError(f"penalty function must have minimum value 0 (got {m:.3e})")


@dataclass(frozen=True, eq=False)
class GradientProblem:
    """``x' + dphi(x) + beta(t) dpsi(x) = 0``, or the rescaled
    ``x' + dpsi(x) + eps(t) dphi(x) = 0`` when ``parameterization`` is ``"epsilon"``."""

    phi: ConvexFunction
    psi: ConvexFunction
    schedule: Schedule
    parameterization: str = BETA

    def __post_init__(self):
        if self.parameterization not in (BETA, EPSILON):
            raise ValueError(f"unknown parameterization {self.parameterization!r}")
        _check_penalty(self.psi, self.phi.dim)

    @property
    def dim(self):
        return self.phi.dim

    def penalty_weight(self, ts):
        """Equivalent penalty ``beta`` on the trajectory's own clock."""
        v = self.schedule.values(ts)
        return v if self.parameterization == BETA else 1.0 / v


@dataclass(frozen=True, eq=False)
class MonotoneProblem:
    """``x' + A x + beta(t) dpsi(x) = 0`` with ``A`` maximal monotone."""

    op: MonotoneOperator
    psi: ConvexFunction
    schedule: Schedule

    parameterization = BETA

    def __post_init__(self):
        _check_penalty(self.psi, self.op.dim)

    @property
    def dim(self):
        return self.op.dim

    @property
    def phi(self):
        return self.op.f if isinstance(self.op, SubdifferentialOf) else None

    def penalty_weight(self, ts):
        return self.schedule.values(ts)


class StepError(RuntimeError):
    """A step failed; ``partial`` holds the trajectory up to the failure."""

    def __init__(self, message, partial=None, residual=math.nan):
        super().__init__(message)
        self.partial = partial
        self.residual = residual


# ---------------------------------------------------------------------------
# Single steps
# ---------------------------------------------------------------------------


def step(problem, x, t_next, h):
    """One proximal step: ``argmin_u phi(u) + beta psi(u) + |u - x|^2 / (2h)``."""
    if not h > 0:
        raise ValueError("step size must be positive")
    x = as_point(x, problem.dim)
    w = float(problem.schedule.value(t_next))
    if problem.parameterization == BETA:
        f = Sum(problem.phi, Scale(problem.psi, w))
    else:
        f = Sum(problem.psi, Scale(problem.phi, w))
    return f.prox(h, x)


def step_mami(problem, x, t_next, h, theta=1.0):
    """Resolvent step ``x+ + h A(x+) + h beta eta = x`` with ``eta`` in ``dpsi(x+)``.

    ``theta < 1`` evaluates an affine ``A`` at ``theta x+ + (1 - theta) x``
    (``theta = 1/2`` keeps skew operators norm preserving).
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    x = as_point(x, problem.dim)
    beta = float(problem.schedule.value(t_next))
    op, psi = problem.op, problem.psi
    aff = op.affine_form()
    if theta != 1.0 and aff is None:
        raise ValueError("theta-stepping needs an affine operator")
    quad = psi.quadratic_form()
    if aff is not None and quad is not None:
        M, q = aff
        Q, c, _ = quad
        lhs = np.eye(problem.dim) + h * theta * M + h * beta * Q
        rhs = x - h * (1.0 - theta) * (M @ x) - h * q - h * beta * c
        return np.linalg.solve(lhs, rhs)
    if aff is not None:
        M, q = aff
        explicit = (1.0 - theta) * (M @ x) + q

        def resolvent_T1(gamma, w):
            # u + gamma (theta M u + explicit + (u - x)/h) = w
            lhs = (1.0 + gamma / h) * np.eye(problem.dim) + gamma * theta * M
            return np.linalg.solve(lhs, w + gamma * x / h - gamma * explicit)
    else:

        def resolvent_T1(gamma, w):
            k = 1.0 + gamma / h
            return op.resolvent(gamma / k, (w + gamma * x / h) / k)

    gamma = h
    z = x.copy()
    scale = max(1.0, np.linalg.norm(x))
    resid = math.inf
    for it in range(1, INNER_MAXITER + 1):
        u = resolvent_T1(gamma, z)
        v = psi.prox(gamma * beta, 2.0 * u - z)
        z = z + v - u
        resid = float(np.linalg.norm(u - v))
        if resid <= INNER_TOL * scale:
            return u
    raise ProxConvergenceError("resolvent/prox splitting did not converge", resid, it)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    t: float
    phi_val: float
    psi_val: float
    beta_val: float
    beta_psi: float
    e1: float
    e2: float
    hz: tuple
    velocity: np.ndarray
    xi_eta_residual: float
    cum_beta_psi: float
    ergodic_mean: np.ndarray


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniform-grid trajectory with per-step diagnostics stored column-wise."""

    times: np.ndarray
    states: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    beta: np.ndarray
    hz: np.ndarray
    residual: np.ndarray
    probes: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def beta_psi(self):
        return self.beta * self.psi

    @property
    def e1(self):
        return self.phi / self.beta + self.psi

    @property
    def e2(self):
        return self.phi + self.beta * self.psi

    @property
    def velocity(self):
        v = np.zeros_like(self.states)
        if len(self.times) > 1:
            v[1:] = np.diff(self.states, axis=0) / np.diff(self.times)[:, None]
        return v

    @property
    def step_norm(self):
        return np.linalg.norm(self.velocity, axis=1)

    @property
    def cum_beta_psi(self):
        bp = self.beta_psi
        out = np.zeros_like(bp)
        if len(bp) > 1:
            out[1:] = np.cumsum(0.5 * (bp[1:] + bp[:-1]) * np.diff(self.times))
        return out

    @property
    def ergodic_mean(self):
        return ergodic_mean(self)

    @property
    def dim(self):
        return self.states.shape[1]

    def __len__(self):
        return len(self.times)

    def record(self, k):
        return StepRecord(
            t=float(self.times[k]),
            phi_val=float(self.phi[k]),
            psi_val=float(self.psi[k]),
            beta_val=float(self.beta[k]),
            beta_psi=float(self.beta_psi[k]),
            e1=float(self.e1[k]),
            e2=float(self.e2[k]),
            hz=tuple(float(v) for v in self.hz[k]),
            velocity=self.velocity[k],
            xi_eta_residual=float(self.residual[k]),
            cum_beta_psi=float(self.cum_beta_psi[k]),
            ergodic_mean=self.ergodic_mean[k],
        )

    @property
    def records(self):
        return [self.record(k) for k in range(len(self))]


def ergodic_mean(traj):
    """Running time average ``(1/t) int_0^t x`` by the trapezoid rule (``x0`` at ``t = 0``)."""
    x, t = traj.states, traj.times
    if len(t) == 0:
        raise ValueError("empty trajectory")
    out = np.empty_like(x)
    out[0] = x[0]
    if len(t) > 1:
        integral = np.cumsum(0.5 * (x[1:] + x[:-1]) * np.diff(t)[:, None], axis=0)
        out[1:] = integral / (t[1:] - t[0])[:, None]
    return out


def _values(f, states):
    if f is None:
        return np.full(states.shape[0], np.nan)
    q = f.quadratic_form()
    if q is not None:
        Q, c, r = q
        return 0.5 * np.einsum("ij,jk,ik->i", states, Q, states) + states @ c + r
    return np.array([f._eval(x) for x in states])


def _assemble(problem, times, states, residual, probes, theta):
    probes = np.zeros((0, problem.dim)) if probes is None or len(probes) == 0 else \
        np.array([as_point(z, problem.dim) for z in probes])
    diffs = states[:, None, :] - probes[None, :, :]
    hz = 0.5 * np.sum(diffs ** 2, axis=2)
    is_grad = isinstance(problem, GradientProblem)
    meta = {
        "kind": "gradient" if is_grad else "monotone",
        "parameterization": problem.parameterization,
        "has_phi": problem.phi is not None,
        "modulus": float(problem.op.modulus) if not is_grad else _phi_modulus(problem.phi),
        "h": float(times[1] - times[0]) if len(times) > 1 else math.nan,
        "theta": float(theta),
        "problem": problem,
    }
    return Trajectory(
        times=times,
        states=states,
        phi=_values(problem.phi, states),
        psi=_values(problem.psi, states),
        beta=np.asarray(problem.penalty_weight(times), dtype=float),
        hz=hz,
        residual=residual,
        probes=probes,
        meta=meta,
    )


def _phi_modulus(phi):
    q = phi.quadratic_form()
    if q is None:
        return 0.0
    w = float(np.linalg.eigvalsh(q[0])[0])
    return w if w > 1e-12 else 0.0


def _linear_data(problem):
    """Kernel operands ``(Ma, qa, wa_is_schedule, Mb, qb)`` or None."""
    qpsi = problem.psi.quadratic_form()
    if qpsi is None:
        return None
    if isinstance(problem, GradientProblem):
        qphi = problem.phi.quadratic_form()
        if qphi is None:
            return None
        if problem.parameterization == BETA:
            return (qphi[0], qphi[1]), (qpsi[0], qpsi[1]), "b"
        return (qphi[0], qphi[1]), (qpsi[0], qpsi[1]), "a"
    aff = problem.op.affine_form()
    if aff is None:
        return None
    return aff, (qpsi[0], qpsi[1]), "b"


def _grid(t_end, h):
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    if not h > 0:
        raise ValueError("step size must be positive")
    n = int(round(t_end / h))
    if n < 1 or abs(n * h - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"t_end={t_end} is not a whole number of steps of size {h}")
    return h * np.arange(n + 1)


def run(problem, x0, t_end, h, probes=(), theta=1.0):
    """Integrate ``problem`` from ``x0`` on the uniform grid ``0, h, ..., t_end``.

    ``probes`` are points ``z`` whose anchor functions ``|x - z|^2 / 2`` are
    recorded.  Raises :class:`StepError` carrying the partial trajectory when
    a step fails.
    """
    x0 = as_point(x0, problem.dim)
    times = _grid(t_end, h)
    if theta != 1.0 and not isinstance(problem, MonotoneProblem):
        raise ValueError("theta-stepping is only defined for monotone problems")
    lin = _linear_data(problem)
    if lin is not None:
        (Ma, qa), (Mb, qb), weighted = lin
        w = np.asarray(problem.schedule.values(times[1:]), dtype=float)
        ones = np.ones_like(w)
        wa, wb = (w, ones) if weighted == "a" else (ones, w)
        try:
            states, resid = kernels.linear_implicit_flow(
                np.ascontiguousarray(Ma, dtype=float), np.ascontiguousarray(qa, dtype=float),
                np.ascontiguousarray(Mb, dtype=float), np.ascontiguousarray(qb, dtype=float),
                wa, wb, x0, float(h), float(theta))
        except ZeroDivisionError as exc:
            raise StepError(str(exc)) from exc
        if not np.all(np.isfinite(states)):
            bad = int(np.argmax(~np.all(np.isfinite(states), axis=1)))
            partial = _assemble(problem, times[:bad], states[:bad], resid[:bad], probes, theta)
            raise StepError(f"non-finite state at t={times[bad]}", partial)
        return _assemble(problem, times, states, resid, probes, theta)

    states = np.empty((len(times), problem.dim))
    resid = np.zeros(len(times))
    states[0] = x0
    for k in range(1, len(times)):
        try:
            if isinstance(problem, GradientProblem):
                states[k] = step(problem, states[k - 1], times[k], h)
            else:
                states[k] = step_mami(problem, states[k - 1], times[k], h, theta)
        except ProxConvergenceError as exc:
            partial = _assemble(problem, times[:k], states[:k], resid[:k], probes, theta)
            raise StepError(f"step {k} failed: {exc}", partial, exc.residual) from exc
        resid[k] = _step_residual(problem, states[k - 1], states[k], times[k], h, theta)
    return _assemble(problem, times, states, resid, probes, theta)


def _step_residual(problem, x, xn, t_next, h, theta):
    """Optimality residual of an implicit step when a gradient is available, else 0."""
    try:
        w = float(problem.schedule.value(t_next))
        if isinstance(problem, GradientProblem):
            a, b = (problem.phi, problem.psi) if problem.parameterization == BETA else (problem.psi, problem.phi)
            qa, qb = a.quadratic_form(), b.quadratic_form()
            if qa is None or qb is None:
                return 0.0
            g = qa[0] @ xn + qa[1] + w * (qb[0] @ xn + qb[1])
        else:
            aff, qb = problem.op.affine_form(), problem.psi.quadratic_form()
            if aff is None or qb is None:
                return 0.0
            xm = theta * xn + (1 - theta) * x
            g = aff[0] @ xm + aff[1] + w * (qb[0] @ xn + qb[1])
        return float(np.linalg.norm((xn - x) / h + g))
    except NotImplementedError:
        return 0.0


# ---------------------------------------------------------------------------
# Convergence diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    verdict: str
    hz_tail_slope: tuple
    hz_positive_variation: tuple
    cum_beta_psi_final: float
    cum_beta_psi_peak: float
    e1_final: float
    e2_final: float
    beta_psi_final: float
    velocity_final: float
    state_amplitude: float
    state_norm_spread: float
    ergodic_norm_final: float
    ergodic_settling: float
    distance_to_limit: float


def _slope(t, y):
    if len(t) < 2:
        return 0.0
    tc = t - t.mean()
    denom = float(tc @ tc)
    return 0.0 if denom == 0 else float(tc @ (y - y.mean()) / denom)


def convergence_report(traj, limit=None):
    """Tail diagnostics and a regime verdict for a trajectory.

    Verdicts: ``converged`` when the final velocity is at most ``1e-6`` and
    no anchor function increases on the last half; ``ergodic-only`` when the
    state keeps oscillating (relative amplitude above ``1e-3``) while the
    ergodic mean settles; ``diverged`` for blow-up; else ``inconclusive``.
    """
    n = len(traj)
    half = n // 2
    t = traj.times
    hz = traj.hz
    slopes = tuple(_slope(t[half:], hz[half:, j]) for j in range(hz.shape[1]))
    pos_var = tuple(float(np.sum(np.maximum(np.diff(hz[half:, j]), 0.0))) for j in range(hz.shape[1]))
    cbp = traj.cum_beta_psi
    vel = traj.step_norm
    x = traj.states
    norms = np.linalg.norm(x, axis=1)
    tail = x[half:]
    scale = max(1.0, float(np.max(norms[half:])) if n else 1.0)
    amplitude = float(np.max(np.linalg.norm(tail - tail[-1], axis=1))) / scale if n else 0.0
    spread = float(np.max(norms[half:]) - np.min(norms[half:])) if n else 0.0
    X = traj.ergodic_mean
    q3, q4 = n // 2, (3 * n) // 4
    dev = np.linalg.norm(X - X[-1], axis=1)
    late = float(np.max(dev[q4:])) if n > 4 else 0.0
    early = float(np.max(dev[q3:q4])) if q4 > q3 else 0.0
    settling = late / early if early > 0 else 0.0
    dist = float(np.linalg.norm(x[-1] - as_point(limit, traj.dim))) if limit is not None else math.nan
    # a transient approaches x_T almost monotonically; an oscillation keeps coming back
    d = np.linalg.norm(tail - tail[-1], axis=1)
    swing = float(np.sum(np.maximum(np.diff(d), 0.0)) / np.max(d)) if len(d) > 1 and np.max(d) > 0 else 0.0

    hz_ok = all(s <= 1e-12 * (1.0 + float(np.max(hz[:, j]))) for j, s in enumerate(slopes))
    if not np.all(np.isfinite(x)) or norms[-1] > 1e6 * (1.0 + norms[0]):
        verdict = "diverged"
    elif vel[-1] <= VELOCITY_TOL and hz_ok:
        verdict = "converged"
    elif amplitude > OSCILLATION_TOL and swing >= 1.0 and early > 0 and late < early:
        verdict = "ergodic-only"
    else:
        verdict = "inconclusive"
    return ConvergenceReport(
        verdict=verdict,
        hz_tail_slope=slopes,
        hz_positive_variation=pos_var,
        cum_beta_psi_final=float(cbp[-1]),
        cum_beta_psi_peak=float(np.max(cbp)),
        e1_final=float(traj.e1[-1]),
        e2_final=float(traj.e2[-1]),
        beta_psi_final=float(traj.beta_psi[-1]),
        velocity_final=float(vel[-1]),
        state_amplitude=amplitude,
        state_norm_spread=spread,
        ergodic_norm_final=float(np.linalg.norm(X[-1])),
        ergodic_settling=settling,
        distance_to_limit=dist,
    )


def refinement_study(problem, x0, t_end, hs, probes=(), theta=1.0):
    """Final states for each step size in ``hs`` (rows follow ``hs``)."""
    return np.array([run(problem, x0, t_end, h, probes, theta).states[-1] for h in hs])
