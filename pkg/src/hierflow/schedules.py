"""Penalty schedules and numeric audits of their growth hypotheses.

A schedule is a positive function of time together with its derivative.
``Beta`` schedules are penalty weights meant to increase to infinity;
``Epsilon`` schedules are the reciprocal-scale controls of the rescaled
system and are meant to decrease to zero.  :func:`rescale_to_eps` converts
one parameterization into the other.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import brentq

from .convex import as_point, normal_cone_contains, project_argmin, _require_argmin

__all__ = [
    "BETA",
    "EPSILON",
    "Schedule",
    "PowerLaw",
    "Exponential",
    "Constant",
    "Logarithmic",
    "Custom",
    "RescaledEpsilon",
    "parse_schedule",
    "QuadratureError",
    "adaptive_simpson",
    "integrate",
    "H1Verdict",
    "h1_integrand",
    "h1_eps_integrand",
    "h1_check",
    "h2_check",
    "h2_eps_check",
    "tail_exponent",
    "rescale_to_eps",
    "t_eps",
    "inverse_cumulative",
]

BETA = "beta"
EPSILON = "epsilon"

SIMPSON_TOL = 1e-10
VERDICT_MARGIN = 0.1
# harmonic tails (exponent exactly -1) diverge; allow for fit roundoff below -1
DIVERGENT_SLACK = 1e-3
FIT_RESIDUAL_MAX = 0.05


class QuadratureError(ArithmeticError):
    pass


def adaptive_simpson(f, a, b, tol=SIMPSON_TOL, max_depth=50):
    """Adaptive Simpson quadrature of ``f`` over ``[a, b]``.

    Panels are bisected until the Richardson error estimate falls below the
    panel's share of ``tol`` (or ``1e-13`` relative to the panel value, when
    that is larger, so huge integrands still terminate).
    """
    if b == a:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) * (fa + 4.0 * fm + fb) / 6.0
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        a0, b0, fa0, fm0, fb0, s0, tol0, depth = stack.pop()
        m0 = 0.5 * (a0 + b0)
        lm, rm = 0.5 * (a0 + m0), 0.5 * (m0 + b0)
        flm, frm = f(lm), f(rm)
        left = (m0 - a0) * (fa0 + 4.0 * flm + fm0) / 6.0
        right = (b0 - m0) * (fm0 + 4.0 * frm + fb0) / 6.0
        err = left + right - s0
        if not math.isfinite(err):
            raise QuadratureError(f"non-finite integrand on [{a0}, {b0}]")
        if abs(err) <= 15.0 * max(tol0, 1e-13 * abs(left + right)) or depth >= max_depth:
            if depth >= max_depth and abs(err) > 15.0 * max(tol0, 1e-13 * abs(left + right)):
                raise QuadratureError(f"adaptive Simpson hit depth {max_depth} near t={m0:.6g}")
            total += left + right + err / 15.0
        else:
            stack.append((a0, m0, fa0, flm, fm0, left, 0.5 * tol0, depth + 1))
            stack.append((m0, b0, fm0, frm, fb0, right, 0.5 * tol0, depth + 1))
    return total


def integrate(f, a, b, panel=1.0, tol=SIMPSON_TOL):
    """Sum of adaptive Simpson integrals over unit-width panels of ``[a, b]``."""
    edges = np.arange(a, b, panel)
    edges = np.append(edges, b)
    return float(sum(adaptive_simpson(f, lo, hi, tol) for lo, hi in zip(edges[:-1], edges[1:])))


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


class Schedule:
    """Positive time-scaling function with derivative.

    ``value`` and ``derivative`` accept scalars or arrays.  ``cumulative``
    integrates by adaptive Simpson on unit panels, caching whole panels.
    """

    direction = BETA

    def value(self, t):
        raise NotImplementedError

    def derivative(self, t):
        raise NotImplementedError

    def __call__(self, t):
        return self.value(t)

    def values(self, ts):
        return np.asarray(self.value(np.asarray(ts, dtype=float)), dtype=float)

    def _panel(self, k):
        cache = self.__dict__.setdefault("_panel_cache", {})
        if k not in cache:
            cache[k] = adaptive_simpson(self._scalar, float(k), float(k + 1))
        return cache[k]

    def _scalar(self, t):
        return float(self.value(t))

    def cumulative(self, t):
        """``int_0^t value(s) ds``."""
        if t < 0:
            raise ValueError("cumulative integral needs t >= 0")
        k = int(math.floor(t))
        whole = math.fsum(self._panel(j) for j in range(k))
        return whole + adaptive_simpson(self._scalar, float(k), float(t))

    def describe(self):
        """Scenario-grammar spelling, e.g. ``"power 1 2"``."""
        raise NotImplementedError


@dataclass(frozen=True)
class PowerLaw(Schedule):
    """``a (1 + t)^p``."""

    a: float
    p: float
    direction: str = BETA

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("power-law coefficient must be positive")

    def value(self, t):
        return self.a * (1.0 + t) ** self.p

    def derivative(self, t):
        return self.a * self.p * (1.0 + t) ** (self.p - 1.0)

    def describe(self):
        return f"power {_num(self.a)} {_num(self.p)}"


@dataclass(frozen=True)
class Exponential(Schedule):
    """``a exp(r t)``."""

    a: float
    r: float
    direction: str = BETA

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("exponential coefficient must be positive")

    def value(self, t):
        return self.a * np.exp(self.r * t)

    def derivative(self, t):
        return self.a * self.r * np.exp(self.r * t)

    def describe(self):
        return f"exp {_num(self.a)} {_num(self.r)}"


@dataclass(frozen=True)
class Constant(Schedule):
    a: float
    direction: str = BETA

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("constant schedule must be positive")

    def value(self, t):
        return np.full(np.shape(t), float(self.a)) if np.ndim(t) else float(self.a)

    def derivative(self, t):
        return np.zeros(np.shape(t)) if np.ndim(t) else 0.0

    def describe(self):
        return f"const {_num(self.a)}"


@dataclass(frozen=True)
class Logarithmic(Schedule):
    """``a log(e + t)``."""

    a: float
    direction: str = BETA

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("logarithmic coefficient must be positive")

    def value(self, t):
        return self.a * np.log(math.e + t)

    def derivative(self, t):
        return self.a / (math.e + t)

    def describe(self):
        return f"log {_num(self.a)}"


@dataclass(frozen=True)
class Custom(Schedule):
    """Schedule from Python callables (not expressible in scenario files)."""

    fn: Callable
    dfn: Callable
    name: str = "custom"
    direction: str = BETA

    def value(self, t):
        if np.ndim(t):
            return np.vectorize(self.fn, otypes=[float])(t)
        return float(self.fn(t))

    def derivative(self, t):
        if np.ndim(t):
            return np.vectorize(self.dfn, otypes=[float])(t)
        return float(self.dfn(t))

    def describe(self):
        raise ValueError(f"custom schedule {self.name!r} has no scenario spelling")


@dataclass(frozen=True, eq=False)
class RescaledEpsilon(Schedule):
    """The control ``eps(t) = 1 / beta(t_beta(t))`` matched to a penalty schedule.

    ``t_beta`` inverts the cumulative integral of ``beta``.  Values at many
    increasing times are obtained incrementally by :meth:`values`.
    """

    beta: Schedule
    direction: str = field(default=EPSILON, init=False)

    def t_beta(self, t):
        return inverse_cumulative(self.beta, t)

    def value(self, t):
        if np.ndim(t):
            return self.values(t)
        return 1.0 / float(self.beta.value(self.t_beta(t)))

    def derivative(self, t):
        s = self.t_beta_many(t) if np.ndim(t) else self.t_beta(t)
        b = self.beta.value(s)
        return -self.beta.derivative(s) / b ** 3

    def t_beta_many(self, ts):
        """``t_beta`` at every entry of ``ts`` (any order) by incremental root finding."""
        ts = np.asarray(ts, dtype=float)
        order = np.argsort(ts, kind="stable")
        out = np.empty_like(ts)
        s_prev, c_prev = 0.0, 0.0
        f = self.beta._scalar
        for idx in order:
            t = ts[idx]
            if t < 0:
                raise ValueError("rescaled time must be nonnegative")
            if t == c_prev:
                out[idx] = s_prev
                continue
            target = t - c_prev

            def g(s, s0=s_prev, target=target):
                return adaptive_simpson(f, s0, s) - target

            hi = s_prev + target / f(s_prev)
            width = hi - s_prev
            for _ in range(200):
                if g(hi) >= 0:
                    break
                width *= 2.0
                hi = s_prev + width
            else:
                raise ValueError(f"time {t} is beyond the reachable range of the schedule")
            s = brentq(g, s_prev, hi, xtol=1e-14, maxiter=200)
            c_prev = c_prev + adaptive_simpson(f, s_prev, s)
            s_prev = s
            out[idx] = s
        return out

    def values(self, ts):
        return 1.0 / np.asarray(self.beta.value(self.t_beta_many(ts)), dtype=float)

    def describe(self):
        return f"dual {self.beta.describe()}"


def parse_schedule(text, direction=BETA):
    """Inverse of :meth:`Schedule.describe`: ``power a p``, ``exp a r``,
    ``const a``, ``log a`` or ``dual <schedule>``."""
    words = text.split()
    if not words:
        raise ValueError("empty schedule")
    kind, args = words[0], words[1:]
    if kind == "dual":
        return RescaledEpsilon(parse_schedule(" ".join(args)))
    arity = {"power": 2, "exp": 2, "const": 1, "log": 1}
    if kind not in arity:
        raise ValueError(f"unknown schedule kind {kind!r} (expected power, exp, const, log or dual)")
    if len(args) != arity[kind]:
        raise ValueError(f"schedule {kind!r} takes {arity[kind]} number(s), got {len(args)}")
    try:
        nums = [float(a) for a in args]
    except ValueError:
        raise ValueError(f"schedule {text!r} has a non-numeric parameter") from None
    if not all(math.isfinite(v) for v in nums):
        raise ValueError("schedule parameters must be finite")
    cls = {"power": PowerLaw, "exp": Exponential, "const": Constant, "log": Logarithmic}[kind]
    return cls(*nums, direction=direction)


def _num(v):
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


# ---------------------------------------------------------------------------
# Time-rescaling dictionary
# ---------------------------------------------------------------------------


def inverse_cumulative(schedule, t, max_doublings=200):
    """The ``s >= 0`` with ``int_0^s schedule = t``, by bracketing root finding."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    if t == 0:
        return 0.0
    hi = 1.0
    for _ in range(max_doublings):
        if schedule.cumulative(hi) >= t:
            break
        hi *= 2.0
    else:
        raise ValueError(f"time {t} is beyond the reachable range of the schedule")
    s = brentq(lambda u: schedule.cumulative(u) - t, 0.0, hi, xtol=1e-14, maxiter=200)
    if abs(schedule.cumulative(s) - t) > 1e-10 * (1.0 + t):
        raise ValueError(f"root finding for the rescaled time {t} did not reach its residual target")
    return s


def rescale_to_eps(beta, t):
    """Map ``t`` in the rescaled clock to ``(t_beta, eps)``.

    ``t_beta`` solves ``int_0^{t_beta} beta = t`` and ``eps = 1 / beta(t_beta)``.
    """
    s = inverse_cumulative(beta, t)
    return s, 1.0 / float(beta.value(s))


def t_eps(eps, s):
    """Inverse clock map: ``int_0^{t_eps(s)} eps = s``."""
    return inverse_cumulative(eps, s)


# ---------------------------------------------------------------------------
# Integrability audit
# ---------------------------------------------------------------------------


class H1Verdict(NamedTuple):
    status: str
    partial_integral: float
    tail_exponent_estimate: float
    horizon: float
    fit_residual: float = 0.0


def _certify(psi, p, base_point):
    s = _require_argmin(psi)
    p = as_point(p, s.dim)
    if base_point is not None:
        candidates = [as_point(base_point, s.dim)]
    else:
        candidates = [s.project(p), s.project(s.project(np.zeros(s.dim)) + p)]
    for z in candidates:
        if s.residual(z) <= 1e-10 and normal_cone_contains(psi, z, p):
            return p
    raise ValueError("p is not certified to lie in the range of the normal cone")


def _gap(psi, y):
    """``psi*(y) - sigma_C(y)``, clamped at zero against roundoff."""
    conj = psi.conjugate(y)
    sig = psi.argmin_set.support(y)
    if math.isinf(conj):
        return math.inf
    d = conj - sig
    if d < 0:
        if d >= -1e-12 * (1.0 + abs(conj)):
            return 0.0
        raise ArithmeticError(f"negative conjugate gap {d:.3e}: psi is not a nonnegative penalty")
    return d


def h1_integrand(psi, p, beta, t, base_point=None):
    """``beta(t) [psi*(p / beta(t)) - sigma_C(p / beta(t))]``."""
    p = _certify(psi, p, base_point)
    return _h1_raw(psi, p, beta, t)


def _h1_raw(psi, p, beta, t):
    if not np.any(p):
        return 0.0
    b = float(beta.value(t))
    return b * _gap(psi, p / b)


def h1_eps_integrand(psi, p, eps, t, base_point=None):
    """``psi*(eps(t) p) - sigma_C(eps(t) p)``."""
    p = _certify(psi, p, base_point)
    return _h1_eps_raw(psi, p, eps, t)


def _h1_eps_raw(psi, p, eps, t):
    if not np.any(p):
        return 0.0
    return _gap(psi, float(eps.value(t)) * p)


def tail_exponent(f, t_lo, t_hi, samples=64):
    """Log-log slope of ``f`` against ``1 + t`` on ``[t_lo, t_hi]``.

    Returns ``(slope, rms_residual)``; ``(-inf, 0)`` when ``f`` vanishes on the window.
    """
    ts = np.linspace(t_lo, t_hi, samples)
    vals = np.array([f(t) for t in ts], dtype=float)
    if np.all(vals == 0.0):
        return -math.inf, 0.0
    if np.any(vals <= 0.0) or not np.all(np.isfinite(vals)):
        return math.nan, math.inf
    u, v = np.log1p(ts), np.log(vals)
    slope, icpt = np.polyfit(u, v, 1)
    resid = float(np.sqrt(np.mean((v - (slope * u + icpt)) ** 2)))
    return float(slope), resid


def _verdict(partial, slope, resid, horizon):
    if slope == -math.inf:
        return H1Verdict("Finite", partial, slope, horizon, resid)
    if not math.isfinite(partial) or math.isnan(slope) or resid > FIT_RESIDUAL_MAX:
        return H1Verdict("Inconclusive", partial, slope, horizon, resid)
    if slope < -1.0 - VERDICT_MARGIN:
        return H1Verdict("Finite", partial, slope, horizon, resid)
    if slope >= -1.0 - DIVERGENT_SLACK:
        return H1Verdict("Divergent", partial, slope, horizon, resid)
    return H1Verdict("Inconclusive", partial, slope, horizon, resid)


def h1_check(psi, ps, beta, horizon=1000.0, tail_window=100.0, base_point=None):
    """Audit the integrability hypothesis for each ``p`` in ``ps``.

    The integrand is integrated on ``[0, horizon]`` and its decay exponent is
    fitted on the last ``tail_window``.  Returns one :class:`H1Verdict` per ``p``.
    """
    if not (tail_window > 0 and horizon >= 10.0 * tail_window):
        raise ValueError("h1_check needs horizon >= 10 * tail_window > 0")
    out = []
    for p in ps:
        p = _certify(psi, p, base_point)
        f = lambda t, p=p: _h1_raw(psi, p, beta, t)
        partial = integrate(f, 0.0, horizon)
        slope, resid = tail_exponent(f, horizon - tail_window, horizon)
        out.append(_verdict(partial, slope, resid, horizon))
    return out


# ---------------------------------------------------------------------------
# Growth audits
# ---------------------------------------------------------------------------

_H2_SAMPLES = 10_001


def h2_check(beta, k, t0, horizon):
    """True iff ``0 <= beta' <= k beta`` on a dense grid of ``[t0, horizon]``."""
    if not horizon > t0:
        raise ValueError("h2_check needs horizon > t0")
    ts = np.linspace(t0, horizon, _H2_SAMPLES)
    with np.errstate(over="ignore", invalid="ignore"):
        b = np.asarray(beta.values(ts), dtype=float)
        db = np.asarray(beta.derivative(ts), dtype=float)
        ok = (db >= 0.0) & (db <= k * b + 1e-12)
    return bool(np.all(ok) and np.all(np.isfinite(b)) and np.all(np.isfinite(db)))


def h2_eps_check(eps, k, horizon, tail_window=None):
    """Audit of the rescaled growth hypothesis.

    Requires ``eps`` nonincreasing, decaying (tail exponent below
    ``-VERDICT_MARGIN``), non-integrable (tail exponent at least ``-1``) and
    ``-k eps^2 <= eps'`` on a dense grid of ``[0, horizon]``.
    """
    if not horizon > 0:
        raise ValueError("h2_eps_check needs a positive horizon")
    tail_window = horizon / 10.0 if tail_window is None else tail_window
    ts = np.linspace(0.0, horizon, _H2_SAMPLES)
    e = np.asarray(eps.values(ts), dtype=float)
    de = np.asarray(eps.derivative(ts), dtype=float)
    if not (np.all(np.isfinite(e)) and np.all(e > 0) and np.all(np.isfinite(de))):
        return False
    nonincreasing = bool(np.all(de <= 1e-12))
    growth = bool(np.all(-k * e ** 2 <= de + 1e-12))
    slope, _ = tail_exponent(lambda t: float(eps.value(t)), horizon - tail_window, horizon)
    decays = slope < -VERDICT_MARGIN
    not_summable = slope >= -1.0 - 1e-6
    return nonincreasing and growth and decays and not_summable
