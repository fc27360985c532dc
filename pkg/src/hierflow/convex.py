"""Closed proper convex functions with proximal maps, conjugates and argmin sets.

Every catalog member knows its value, proximal map and (where one exists) a
closed-form Fenchel conjugate.  Functions that can play the role of the
penalty ``psi`` also expose their set of minimizers as an :class:`ArgminSet`,
which carries projection, support function and normal-cone tests.

Combinators (:class:`Sum`, :class:`Precompose`, ...) fall back to an inner
splitting loop for the proximal map when no closed form is available.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np

__all__ = [
    "MEMBERSHIP_TOL",
    "UnsupportedCapability",
    "ProxConvergenceError",
    "LinearMap",
    "ArgminSet",
    "Affine",
    "Box",
    "Singleton",
    "WholeSpace",
    "ConvexFunction",
    "Zero",
    "Quadratic",
    "AbsoluteSum",
    "IndicatorAffine",
    "IndicatorBox",
    "IndicatorBall",
    "SqDistToAffine",
    "SqDistToBox",
    "SupportOfBall",
    "Sum",
    "Separable",
    "Precompose",
    "Scale",
    "Translate",
    "least_squares",
    "evaluate",
    "prox",
    "conjugate",
    "numeric_conjugate",
    "support_of_argmin",
    "project_argmin",
    "normal_cone_contains",
    "build_coupling",
]

MEMBERSHIP_TOL = 1e-10
RANGE_TOL = 1e-9
INNER_TOL = 1e-10
INNER_MAXITER = 10_000


class UnsupportedCapability(Exception):
    """Raised when a function lacks the closed form an operation needs."""


class ProxConvergenceError(RuntimeError):
    """Inner splitting loop stopped before reaching its residual target."""

    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


def as_point(x, dim=None):
    """Return ``x`` as a finite 1-D float array, optionally checking its length."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D point, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point has non-finite entries")
    return arr


def _matrix(a, name="matrix"):
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _in_range(mat_t, y, tol=RANGE_TOL):
    """Least-squares test for ``y in range(mat_t)``; returns (flag, coefficients)."""
    mu, *_ = np.linalg.lstsq(mat_t, y, rcond=None)
    resid = np.linalg.norm(mat_t @ mu - y)
    return resid <= tol * (1.0 + np.linalg.norm(y)), mu


@dataclass(frozen=True, eq=False)
class LinearMap:
    """Dense linear map ``R^cols -> R^rows``."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _matrix(self.matrix, "linear map"))

    @property
    def rows(self):
        return self.matrix.shape[0]

    @property
    def cols(self):
        return self.matrix.shape[1]

    def __call__(self, x):
        return self.matrix @ as_point(x, self.cols)

    def adjoint(self, y):
        return self.matrix.T @ as_point(y, self.rows)

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n))


# ---------------------------------------------------------------------------
# Argmin sets
# ---------------------------------------------------------------------------


class ArgminSet:
    """Nonempty closed convex set with projection and support function."""

    dim: int

    def project(self, x):
        raise NotImplementedError

    def residual(self, x):
        """Constraint violation of ``x`` (zero on the set)."""
        raise NotImplementedError

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return self.residual(as_point(x, self.dim)) <= tol

    def support(self, y):
        raise NotImplementedError

    def normal_cone_contains(self, z, p, tol=RANGE_TOL):
        raise NotImplementedError

    def affine_form(self):
        """``(A, b)`` with the set equal to ``{Ax = b}``, or None."""
        return None

    def box_form(self):
        """``(lo, hi)`` with the set equal to the box, or None."""
        return None


@dataclass(frozen=True, eq=False)
class Affine(ArgminSet):
    """``{x : A x = b}``; ``A`` may have redundant rows as long as the system is consistent."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = _matrix(self.A, "A")
        b = as_point(self.b, A.shape[0])
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        x0 = self._pinv @ b
        if np.linalg.norm(A @ x0 - b) > RANGE_TOL * (1.0 + np.linalg.norm(b)):
            raise ValueError("affine set is empty (inconsistent system)")

    @property
    def dim(self):
        return self.A.shape[1]

    @cached_property
    def _pinv(self):
        return np.linalg.pinv(self.A)

    @cached_property
    def anchor(self):
        """Minimum-norm point of the set."""
        return self._pinv @ self.b

    def project(self, x):
        x = as_point(x, self.dim)
        return x - self._pinv @ (self.A @ x - self.b)

    def residual(self, x):
        return float(np.linalg.norm(self.A @ x - self.b))

    def support(self, y):
        y = as_point(y, self.dim)
        ok, mu = _in_range(self.A.T, y)
        return float(mu @ self.b) if ok else math.inf

    def normal_cone_contains(self, z, p, tol=RANGE_TOL):
        return _in_range(self.A.T, as_point(p, self.dim), tol)[0]

    def affine_form(self):
        return self.A, self.b


@dataclass(frozen=True, eq=False)
class Box(ArgminSet):
    """Coordinate box ``lo <= x <= hi`` (infinite bounds allowed)."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-D arrays of equal length")
        if np.any(lo > hi) or np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("box is empty (lo > hi)")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.shape[0]

    def project(self, x):
        return np.clip(as_point(x, self.dim), self.lo, self.hi)

    def residual(self, x):
        return float(np.linalg.norm(x - np.clip(x, self.lo, self.hi)))

    def support(self, y):
        y = as_point(y, self.dim)
        total = 0.0
        for yi, lo, hi in zip(y, self.lo, self.hi):
            if yi > 0:
                total += yi * hi
            elif yi < 0:
                total += yi * lo
        return float(total)

    def normal_cone_contains(self, z, p, tol=RANGE_TOL):
        z = as_point(z, self.dim)
        p = as_point(p, self.dim)
        for zi, pi, lo, hi in zip(z, p, self.lo, self.hi):
            at_lo = abs(zi - lo) <= MEMBERSHIP_TOL
            at_hi = abs(zi - hi) <= MEMBERSHIP_TOL
            if at_lo and at_hi:
                continue
            if at_hi and pi >= -tol:
                continue
            if at_lo and pi <= tol:
                continue
            if abs(pi) <= tol:
                continue
            return False
        return True

    def box_form(self):
        return self.lo, self.hi


@dataclass(frozen=True, eq=False)
class Singleton(ArgminSet):
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z", as_point(self.z))

    @property
    def dim(self):
        return self.z.shape[0]

    def project(self, x):
        as_point(x, self.dim)
        return self.z.copy()

    def residual(self, x):
        return float(np.linalg.norm(x - self.z))

    def support(self, y):
        return float(as_point(y, self.dim) @ self.z)

    def normal_cone_contains(self, z, p, tol=RANGE_TOL):
        as_point(p, self.dim)
        return True

    def affine_form(self):
        return np.eye(self.dim), self.z

    def box_form(self):
        return self.z, self.z


@dataclass(frozen=True, eq=False)
class WholeSpace(ArgminSet):
    dim: int

    def project(self, x):
        return as_point(x, self.dim).copy()

    def residual(self, x):
        return 0.0

    def support(self, y):
        y = as_point(y, self.dim)
        return 0.0 if np.linalg.norm(y) <= RANGE_TOL else math.inf

    def normal_cone_contains(self, z, p, tol=RANGE_TOL):
        return bool(np.linalg.norm(as_point(p, self.dim)) <= tol)

    def affine_form(self):
        return np.zeros((0, self.dim)), np.zeros(0)

    def box_form(self):
        return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)


def _make_affine(A, b):
    if A.shape[0] == 0:
        return WholeSpace(A.shape[1])
    return Affine(A, b)


def _product(sets):
    """Cartesian product of argmin sets, when it stays in the catalog."""
    if all(isinstance(s, WholeSpace) for s in sets):
        return WholeSpace(sum(s.dim for s in sets))
    if all(isinstance(s, Singleton) for s in sets):
        return Singleton(np.concatenate([s.z for s in sets]))
    forms = [s.affine_form() for s in sets]
    if all(f is not None for f in forms) and not any(isinstance(s, Box) for s in sets):
        rows = sum(f[0].shape[0] for f in forms)
        A = np.zeros((rows, sum(s.dim for s in sets)))
        r = c = 0
        for (Ai, _), s in zip(forms, sets):
            A[r:r + Ai.shape[0], c:c + s.dim] = Ai
            r += Ai.shape[0]
            c += s.dim
        return _make_affine(A, np.concatenate([f[1] for f in forms]))
    boxes = [s.box_form() for s in sets]
    if all(bx is not None for bx in boxes):
        return Box(np.concatenate([bx[0] for bx in boxes]), np.concatenate([bx[1] for bx in boxes]))
    return None


def _intersection(s1, s2):
    if isinstance(s1, WholeSpace):
        return s2
    if isinstance(s2, WholeSpace):
        return s1
    if isinstance(s1, Box) and isinstance(s2, Box):
        lo, hi = np.maximum(s1.lo, s2.lo), np.minimum(s1.hi, s2.hi)
        return Box(lo, hi) if np.all(lo <= hi) else None
    f1, f2 = s1.affine_form(), s2.affine_form()
    if f1 is None or f2 is None:
        return None
    try:
        return Affine(np.vstack([f1[0], f2[0]]), np.concatenate([f1[1], f2[1]]))
    except ValueError:
        return None


# ---------------------------------------------------------------------------
# Functions
# ---------------------------------------------------------------------------


class ConvexFunction:
    """Base class of the catalog.

    Subclasses implement ``_eval``.  ``_prox``, ``_conjugate`` and
    ``_argmin_set`` are optional; when a subclass has a quadratic
    representation the generic quadratic formulas are used instead.
    """

    dim: int

    # -- evaluation -------------------------------------------------------
    def __call__(self, x):
        return self._eval(as_point(x, self.dim))

    def _eval(self, x):
        raise NotImplementedError

    # -- quadratic representation ----------------------------------------
    def quadratic_form(self):
        """``(Q, c, r)`` with ``f(x) = x.Qx/2 + c.x + r``, or None."""
        return None

    @cached_property
    def _quad(self):
        return self.quadratic_form()

    # -- proximal map ----------------------------------------------------
    def prox(self, lam, x):
        if not lam > 0:
            raise ValueError(f"prox step must be positive, got {lam}")
        x = as_point(x, self.dim)
        out = self._prox(lam, x)
        if out is NotImplemented:
            if self._quad is None:
                raise UnsupportedCapability(f"{type(self).__name__} has no proximal map")
            Q, c, _ = self._quad
            out = np.linalg.solve(np.eye(self.dim) + lam * Q, x - lam * c)
        return out

    def _prox(self, lam, x):
        return NotImplemented

    # -- conjugate -------------------------------------------------------
    @property
    def has_closed_conjugate(self):
        return type(self)._conjugate is not ConvexFunction._conjugate or self._quad is not None

    def conjugate(self, y):
        y = as_point(y, self.dim)
        out = self._conjugate(y)
        if out is not NotImplemented:
            return out
        if self._quad is not None:
            return _quadratic_conjugate(self._quad, y)
        if self.dim <= 2:
            return numeric_conjugate(self, y)
        raise UnsupportedCapability(
            f"{type(self).__name__} has no closed-form conjugate in dimension {self.dim}")

    def _conjugate(self, y):
        return NotImplemented

    # -- argmin set ------------------------------------------------------
    @cached_property
    def argmin_set(self):
        """The :class:`ArgminSet` of minimizers, or None when not representable."""
        s = self._argmin_set()
        if s is None and self._quad is not None:
            s = _quadratic_argmin(self._quad)
        return s

    def _argmin_set(self):
        return None

    @property
    def has_argmin_set(self):
        return self.argmin_set is not None

    def min_value(self):
        s = self.argmin_set
        if s is None:
            raise UnsupportedCapability(f"{type(self).__name__} has no argmin-set capability")
        return self._eval(s.project(np.zeros(self.dim)))

    # -- algebra ---------------------------------------------------------
    def __add__(self, other):
        return Sum(self, other)

    def __rmul__(self, c):
        return Scale(self, c)


def _quadratic_conjugate(quad, y):
    Q, c, r = quad
    w, V = _eigh_cached(Q)
    d = y - c
    coeffs = V.T @ d
    zero = w <= 1e-12 * max(1.0, float(np.max(np.abs(w), initial=0.0)))
    if np.linalg.norm(coeffs[zero]) > RANGE_TOL * (1.0 + np.linalg.norm(d)):
        return math.inf
    return float(0.5 * np.sum(coeffs[~zero] ** 2 / w[~zero]) - r)


def _eigh_cached(Q):
    w, V = np.linalg.eigh(Q)
    return w, V


def _quadratic_argmin(quad):
    Q, c, _ = quad
    w, _ = _eigh_cached(Q)
    if np.all(w > 1e-12 * max(1.0, float(np.max(np.abs(w), initial=0.0)))):
        return Singleton(np.linalg.solve(Q, -c))
    try:
        return _make_affine(Q, -c)
    except ValueError:
        return None


def _check_psd(Q, name="Q"):
    if Q.shape[0] != Q.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(Q, Q.T, atol=1e-12, rtol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    w = np.linalg.eigvalsh(Q)
    if w.size and w[0] < -1e-10 * max(1.0, abs(w[-1])):
        raise ValueError(f"{name} must be positive semidefinite (min eigenvalue {w[0]:.3e})")


@dataclass(frozen=True, eq=False)
class Zero(ConvexFunction):
    dim: int

    def _eval(self, x):
        return 0.0

    def _prox(self, lam, x):
        return x.copy()

    def quadratic_form(self):
        return np.zeros((self.dim, self.dim)), np.zeros(self.dim), 0.0

    def _argmin_set(self):
        return WholeSpace(self.dim)


@dataclass(frozen=True, eq=False)
class Quadratic(ConvexFunction):
    """``x -> x.Qx/2 + c.x + r`` with ``Q`` symmetric positive semidefinite."""

    Q: np.ndarray
    c: np.ndarray = None
    r: float = 0.0

    def __post_init__(self):
        Q = _matrix(self.Q, "Q")
        _check_psd(Q)
        Q = 0.5 * (Q + Q.T)
        c = np.zeros(Q.shape[0]) if self.c is None else as_point(self.c, Q.shape[0])
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "r", float(self.r))

    @property
    def dim(self):
        return self.Q.shape[0]

    def _eval(self, x):
        return float(0.5 * x @ self.Q @ x + self.c @ x + self.r)

    def gradient(self, x):
        return self.Q @ as_point(x, self.dim) + self.c

    def quadratic_form(self):
        return self.Q, self.c, self.r


def least_squares(A, b):
    """``x -> ||Ax - b||^2 / 2`` as a :class:`Quadratic`."""
    A = _matrix(A, "A")
    b = as_point(b, A.shape[0])
    return Quadratic(A.T @ A, -A.T @ b, 0.5 * float(b @ b))


@dataclass(frozen=True, eq=False)
class AbsoluteSum(ConvexFunction):
    """Weighted l1 norm ``w * sum |x_i|``."""

    dim: int
    weight: float = 1.0

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError("l1 weight must be positive")

    def _eval(self, x):
        return float(self.weight * np.sum(np.abs(x)))

    def _prox(self, lam, x):
        t = lam * self.weight
        return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)

    def _conjugate(self, y):
        return 0.0 if np.max(np.abs(y)) <= self.weight + MEMBERSHIP_TOL else math.inf

    def _argmin_set(self):
        return Singleton(np.zeros(self.dim))


class _IndicatorOf(ConvexFunction):
    """Indicator of a catalog set: prox is projection, conjugate the support function."""

    @cached_property
    def set(self):
        raise NotImplementedError

    @property
    def dim(self):
        return self.set.dim

    def _eval(self, x):
        return 0.0 if self.set.residual(x) <= MEMBERSHIP_TOL else math.inf

    def _prox(self, lam, x):
        return self.set.project(x)

    def _conjugate(self, y):
        return self.set.support(y)

    def _argmin_set(self):
        return self.set


@dataclass(frozen=True, eq=False)
class IndicatorAffine(_IndicatorOf):
    A: np.ndarray
    b: np.ndarray

    @cached_property
    def set(self):
        return Affine(self.A, self.b)


@dataclass(frozen=True, eq=False)
class IndicatorBox(_IndicatorOf):
    lo: np.ndarray
    hi: np.ndarray

    @cached_property
    def set(self):
        return Box(self.lo, self.hi)


@dataclass(frozen=True, eq=False)
class IndicatorBall(ConvexFunction):
    """Indicator of the centred Euclidean ball of the given radius."""

    dim: int
    radius: float = 1.0

    def _eval(self, x):
        return 0.0 if np.linalg.norm(x) <= self.radius + MEMBERSHIP_TOL else math.inf

    def _prox(self, lam, x):
        n = np.linalg.norm(x)
        return x.copy() if n <= self.radius else x * (self.radius / n)

    def _conjugate(self, y):
        return float(self.radius * np.linalg.norm(y))


class _SqDistTo(ConvexFunction):
    """``x -> dist(x, C)^2 / 2``; conjugate ``|y|^2/2 + sigma_C(y)``."""

    @cached_property
    def set(self):
        raise NotImplementedError

    @property
    def dim(self):
        return self.set.dim

    def _eval(self, x):
        d = x - self.set.project(x)
        return float(0.5 * d @ d)

    def gradient(self, x):
        x = as_point(x, self.dim)
        return x - self.set.project(x)

    def _prox(self, lam, x):
        return x + (lam / (1.0 + lam)) * (self.set.project(x) - x)

    def _conjugate(self, y):
        return float(0.5 * y @ y + self.set.support(y))

    def _argmin_set(self):
        return self.set


@dataclass(frozen=True, eq=False)
class SqDistToAffine(_SqDistTo):
    A: np.ndarray
    b: np.ndarray

    @cached_property
    def set(self):
        return Affine(self.A, self.b)

    def quadratic_form(self):
        s = self.set
        R = s._pinv @ s.A
        R = 0.5 * (R + R.T)
        x0 = s.anchor
        return R, -R @ x0, 0.5 * float(x0 @ R @ x0)


@dataclass(frozen=True, eq=False)
class SqDistToBox(_SqDistTo):
    lo: np.ndarray
    hi: np.ndarray

    @cached_property
    def set(self):
        return Box(self.lo, self.hi)


@dataclass(frozen=True, eq=False)
class SupportOfBall(ConvexFunction):
    """``x -> radius * |x|``, the support function of the centred ball."""

    dim: int
    radius: float = 1.0

    def _eval(self, x):
        return float(self.radius * np.linalg.norm(x))

    def _prox(self, lam, x):
        n = np.linalg.norm(x)
        t = lam * self.radius
        return np.zeros_like(x) if n <= t else x * (1.0 - t / n)

    def _conjugate(self, y):
        return 0.0 if np.linalg.norm(y) <= self.radius + MEMBERSHIP_TOL else math.inf

    def _argmin_set(self):
        return Singleton(np.zeros(self.dim))


# ---------------------------------------------------------------------------
# Combinators
# ---------------------------------------------------------------------------


def _quad_sum(parts):
    Q = sum(p[0] for p in parts)
    c = sum(p[1] for p in parts)
    r = sum(p[2] for p in parts)
    return Q, c, r


@dataclass(frozen=True, eq=False)
class Sum(ConvexFunction):
    f: ConvexFunction
    g: ConvexFunction

    def __post_init__(self):
        if self.f.dim != self.g.dim:
            raise ValueError(f"dimension mismatch in sum: {self.f.dim} vs {self.g.dim}")

    @property
    def dim(self):
        return self.f.dim

    def _eval(self, x):
        return self.f._eval(x) + self.g._eval(x)

    def quadratic_form(self):
        qf, qg = self.f._quad, self.g._quad
        if qf is None or qg is None:
            return None
        return _quad_sum([qf, qg])

    def _prox(self, lam, x):
        if self._quad is not None:
            return NotImplemented
        f, g = self.f, self.g
        # keep the quadratic (or smooth) part on the strongly convex side
        if g._quad is not None and f._quad is None:
            f, g = g, f
        return _douglas_rachford(f, g, lam, x)

    def _argmin_set(self):
        if self._quad is not None:
            return None
        sf, sg = self.f.argmin_set, self.g.argmin_set
        if sf is None or sg is None:
            return None
        if abs(self.f.min_value()) > 1e-12 or abs(self.g.min_value()) > 1e-12:
            return None
        return _intersection(sf, sg)


def _douglas_rachford(f, g, lam, x, gamma=None):
    """prox_{lam (f+g)}(x) by Douglas-Rachford splitting.

    The anchoring quadratic ``|u - x|^2 / (2 lam)`` is folded into ``f`` so
    that each sweep needs only prox_f and prox_g.
    """
    gamma = lam if gamma is None else gamma
    lam_eff = lam * gamma / (lam + gamma)
    z = x.copy()
    scale = max(1.0, np.linalg.norm(x))
    resid = math.inf
    for it in range(1, INNER_MAXITER + 1):
        u = f.prox(lam_eff, (gamma * x + lam * z) / (lam + gamma))
        v = g.prox(gamma, 2.0 * u - z)
        z = z + v - u
        resid = np.linalg.norm(u - v)
        if resid <= INNER_TOL * scale:
            return u
    raise ProxConvergenceError("Douglas-Rachford prox of a sum did not converge", resid, it)


@dataclass(frozen=True, eq=False)
class Separable(ConvexFunction):
    """``x = (x_1, ..., x_m) -> sum f_i(x_i)``."""

    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ValueError("separable function needs at least one block")

    @property
    def dim(self):
        return sum(b.dim for b in self.blocks)

    @cached_property
    def _offsets(self):
        return np.cumsum([0] + [b.dim for b in self.blocks])

    def _split(self, x):
        o = self._offsets
        return [x[o[i]:o[i + 1]] for i in range(len(self.blocks))]

    def _eval(self, x):
        return sum(b._eval(xi) for b, xi in zip(self.blocks, self._split(x)))

    def _prox(self, lam, x):
        return np.concatenate([b.prox(lam, xi) for b, xi in zip(self.blocks, self._split(x))])

    @property
    def has_closed_conjugate(self):
        return all(b.has_closed_conjugate for b in self.blocks)

    def _conjugate(self, y):
        if not self.has_closed_conjugate:
            return NotImplemented
        return sum(b.conjugate(yi) for b, yi in zip(self.blocks, self._split(y)))

    def quadratic_form(self):
        quads = [b._quad for b in self.blocks]
        if any(q is None for q in quads):
            return None
        n = self.dim
        Q = np.zeros((n, n))
        o = self._offsets
        for i, (Qi, _, _) in enumerate(quads):
            Q[o[i]:o[i + 1], o[i]:o[i + 1]] = Qi
        return Q, np.concatenate([q[1] for q in quads]), sum(q[2] for q in quads)

    def _argmin_set(self):
        sets = [b.argmin_set for b in self.blocks]
        if any(s is None for s in sets):
            return None
        return _product(sets)


@dataclass(frozen=True, eq=False)
class Precompose(ConvexFunction):
    """``x -> f(L x)``."""

    f: ConvexFunction
    L: LinearMap

    def __post_init__(self):
        if not isinstance(self.L, LinearMap):
            object.__setattr__(self, "L", LinearMap(self.L))
        if self.L.rows != self.f.dim:
            raise ValueError(f"map output dimension {self.L.rows} != function dimension {self.f.dim}")

    @property
    def dim(self):
        return self.L.cols

    def _eval(self, x):
        return self.f._eval(self.L.matrix @ x)

    def quadratic_form(self):
        q = self.f._quad
        if q is None:
            return None
        M = self.L.matrix
        return M.T @ q[0] @ M, M.T @ q[1], q[2]

    @cached_property
    def _inverse(self):
        M = self.L.matrix
        if M.shape[0] == M.shape[1] and np.linalg.matrix_rank(M) == M.shape[0]:
            return np.linalg.inv(M)
        return None

    @property
    def has_closed_conjugate(self):
        return self._quad is not None or (self._inverse is not None and self.f.has_closed_conjugate)

    def _conjugate(self, y):
        if self._quad is None and self._inverse is not None and self.f.has_closed_conjugate:
            return self.f.conjugate(self._inverse.T @ y)
        return NotImplemented

    def _prox(self, lam, x):
        if self._quad is not None:
            return NotImplemented
        return _admm_precompose(self.f, self.L.matrix, lam, x)

    def _argmin_set(self):
        s = self.f.argmin_set
        if s is None:
            return None
        if isinstance(s, WholeSpace):
            return WholeSpace(self.dim)
        form = s.affine_form()
        if form is None or isinstance(s, Box):
            return None
        try:
            return _make_affine(form[0] @ self.L.matrix, form[1])
        except ValueError:
            return None


def _admm_precompose(f, M, lam, x):
    """prox_{lam f(M .)}(x) by scaled ADMM on the split ``z = M u``."""
    rho = 1.0 / lam
    n = M.shape[1]
    lhs = np.eye(n) / lam + rho * M.T @ M
    chol = np.linalg.cholesky(lhs)
    z = M @ x
    w = np.zeros_like(z)
    scale = max(1.0, np.linalg.norm(x))
    resid = math.inf
    for it in range(1, INNER_MAXITER + 1):
        rhs = x / lam + rho * M.T @ (z - w)
        u = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
        Mu = M @ u
        z_old = z
        z = f.prox(1.0 / rho, Mu + w)
        w = w + Mu - z
        resid = np.linalg.norm(Mu - z) + rho * np.linalg.norm(M.T @ (z - z_old))
        if resid <= INNER_TOL * scale:
            return u
    raise ProxConvergenceError("ADMM prox of a precomposition did not converge", resid, it)


@dataclass(frozen=True, eq=False)
class Scale(ConvexFunction):
    """``x -> c f(x)`` with ``c > 0``."""

    f: ConvexFunction
    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"scale factor must be positive, got {self.c}")
        object.__setattr__(self, "c", float(self.c))

    @property
    def dim(self):
        return self.f.dim

    def _eval(self, x):
        return self.c * self.f._eval(x)

    def _prox(self, lam, x):
        return self.f.prox(lam * self.c, x)

    @property
    def has_closed_conjugate(self):
        return self.f.has_closed_conjugate

    def _conjugate(self, y):
        if not self.f.has_closed_conjugate:
            return NotImplemented
        return self.c * self.f.conjugate(y / self.c)

    def quadratic_form(self):
        q = self.f._quad
        if q is None:
            return None
        return self.c * q[0], self.c * q[1], self.c * q[2]

    def _argmin_set(self):
        return self.f.argmin_set


@dataclass(frozen=True, eq=False)
class Translate(ConvexFunction):
    """``x -> f(x - shift)``."""

    f: ConvexFunction
    shift: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shift", as_point(self.shift, self.f.dim))

    @property
    def dim(self):
        return self.f.dim

    def _eval(self, x):
        return self.f._eval(x - self.shift)

    def _prox(self, lam, x):
        return self.shift + self.f.prox(lam, x - self.shift)

    @property
    def has_closed_conjugate(self):
        return self.f.has_closed_conjugate

    def _conjugate(self, y):
        if not self.f.has_closed_conjugate:
            return NotImplemented
        return self.f.conjugate(y) + float(y @ self.shift)

    def quadratic_form(self):
        q = self.f._quad
        if q is None:
            return None
        Q, c, r = q
        s = self.shift
        return Q, c - Q @ s, r - float(c @ s) + 0.5 * float(s @ Q @ s)

    def _argmin_set(self):
        s = self.f.argmin_set
        if s is None:
            return None
        if isinstance(s, WholeSpace):
            return s
        if isinstance(s, Singleton):
            return Singleton(s.z + self.shift)
        if isinstance(s, Box):
            return Box(s.lo + self.shift, s.hi + self.shift)
        return Affine(s.A, s.b + s.A @ self.shift)


# ---------------------------------------------------------------------------
# Numeric conjugate (cross-check only)
# ---------------------------------------------------------------------------


def numeric_conjugate(f, y, points=101, passes=3):
    """Grid-refined ``sup_x <y, x> - f(x)`` over ``[-R, R]^d``, ``R = 10 (1 + |y|)``.

    Only defined for ``d <= 2``.  Each pass re-centres a grid of the same
    resolution on the incumbent maximiser with a window shrunk to four grid
    cells.  Indicator-type functions whose domain has no interior are
    generally missed by the grid.
    """
    y = as_point(y, f.dim)
    d = f.dim
    if d > 2:
        raise UnsupportedCapability("numeric conjugate is limited to dimension <= 2")
    R = 10.0 * (1.0 + np.linalg.norm(y))
    center = np.zeros(d)
    half = np.full(d, R)
    best_val, best_x = -math.inf, center
    for _ in range(passes):
        axes = [np.linspace(center[i] - half[i], center[i] + half[i], points) for i in range(d)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        grid = grid[np.all(np.abs(grid) <= R + 1e-12, axis=1)]
        vals = grid @ y - np.array([f._eval(g) for g in grid])
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val, best_x = float(vals[k]), grid[k]
        center = best_x
        half = 4.0 * half / (points - 1)
    return best_val


# ---------------------------------------------------------------------------
# Operation-level API
# ---------------------------------------------------------------------------


def evaluate(f, x):
    """``f(x)`` in the extended reals; indicators return ``inf`` off their set."""
    return f(x)


def prox(f, lam, x):
    """``argmin_u f(u) + |u - x|^2 / (2 lam)``."""
    return f.prox(lam, x)


def conjugate(f, y):
    """Fenchel conjugate ``f*(y)``."""
    return f.conjugate(y)


def _require_argmin(f):
    s = f.argmin_set
    if s is None:
        raise UnsupportedCapability(f"{type(f).__name__} has no argmin-set capability")
    return s


def support_of_argmin(f, y):
    """Support function of ``argmin f`` at ``y``."""
    return _require_argmin(f).support(y)


def project_argmin(f, x):
    return _require_argmin(f).project(x)


def normal_cone_contains(f, z, p):
    """True iff ``p`` lies in the normal cone of ``argmin f`` at ``z``.

    ``z`` must belong to the set (residual at most ``MEMBERSHIP_TOL``).
    """
    s = _require_argmin(f)
    z = as_point(z, s.dim)
    if s.residual(z) > MEMBERSHIP_TOL:
        raise ValueError("base point is not in the argmin set")
    return bool(s.normal_cone_contains(z, p))


def build_coupling(L1, L2):
    """``(x1, x2) -> |L1 x1 - L2 x2|^2 / 2`` with argmin ``{L1 x1 = L2 x2}``."""
    L1 = L1 if isinstance(L1, LinearMap) else LinearMap(L1)
    L2 = L2 if isinstance(L2, LinearMap) else LinearMap(L2)
    if L1.rows != L2.rows:
        raise ValueError(f"coupling maps disagree on output dimension: {L1.rows} vs {L2.rows}")
    M = np.hstack([L1.matrix, -L2.matrix])
    return Precompose(Quadratic(np.eye(L1.rows)), LinearMap(M))
