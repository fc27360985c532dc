"""Convergence reports with per-property checks.

Each tag names one asymptotic property that a trajectory should exhibit and
is evaluated from the trajectory (plus an optional reference point):

=====================  ==========================================================
tag                    measured value (pass when at most the threshold)
=====================  ==========================================================
ergodic-mean           ``max |X(t) - X(T)|`` over the last quarter, or
                       ``|X(T) - oracle|`` when an oracle is given
anchor-distance        positive variation of ``h_z`` on the last half, relative
                       to ``1 + max h_z`` (worst probe)
penalty-integral       growth of ``int beta psi`` over the last half, relative
penalty-decay          ``beta psi`` at the end relative to its start value
minimizing             ``max(psi(x_T) / 1e-6, gap / 1e-3)`` with ``gap`` the relative
                       distance of ``phi(x_T)`` to ``phi(oracle)``
hierarchical-limit     ``|x_T - oracle|`` for gradient systems
strong-limit           ``|x_T - oracle|`` for strongly monotone operators
rescaled-limit         ``|x_T - oracle|`` for the epsilon form
compact-limit          ``|x_T - oracle|`` for the epsilon form, no growth bound
=====================  ==========================================================
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from . import kv
from .integrator import GradientProblem, convergence_report
from .schedules import EPSILON

__all__ = ["TAGS", "TagError", "TagResult", "Report", "summarize", "THRESHOLDS"]

THRESHOLDS = {
    "ergodic-mean": 0.05,
    "anchor-distance": 1e-6,
    "penalty-integral": 0.1,
    "penalty-decay": 1e-3,
    "minimizing": 1.0,
    "hierarchical-limit": 1e-3,
    "strong-limit": 1e-4,
    "rescaled-limit": 1e-3,
    "compact-limit": 1e-3,
}
TAGS = tuple(THRESHOLDS)
PSI_TOL = 1e-6
PHI_TOL = 1e-3


class TagError(ValueError):
    """A requested tag does not apply to the trajectory."""


@dataclass(frozen=True)
class TagResult:
    name: str
    passed: bool
    value: float
    threshold: float


@dataclass(frozen=True)
class Report:
    verdict: str
    tags: tuple = ()
    final_state: tuple = ()
    final_diagnostics: dict = field(default_factory=dict)
    refinement_table: tuple = ()

    def tag(self, name):
        for t in self.tags:
            if t.name == name:
                return t
        raise KeyError(name)

    @property
    def passed(self):
        return all(t.passed for t in self.tags)

    def sections(self):
        out = {"": {"verdict": self.verdict, "final_state": list(self.final_state)}}
        out["diagnostics"] = dict(self.final_diagnostics)
        for t in self.tags:
            out[f"tag.{t.name}"] = {
                "status": "pass" if t.passed else "fail",
                "value": t.value,
                "threshold": t.threshold,
            }
        if self.refinement_table:
            out["refinement"] = {
                "h": [h for h, _ in self.refinement_table],
                "rows": len(self.refinement_table),
                "states": [v for _, s in self.refinement_table for v in s],
            }
        return out

    def dumps(self):
        return kv.dumps(self.sections())


def _need(cond, tag, why):
    if not cond:
        raise TagError(f"tag {tag!r} not applicable: {why}")


def _problem(traj):
    return traj.meta.get("problem")


def _check(traj, name, oracle):
    prob = _problem(traj)
    x = traj.states
    n = len(traj)
    is_grad = isinstance(prob, GradientProblem)
    if name == "ergodic-mean":
        X = traj.ergodic_mean
        if oracle is not None:
            return float(np.linalg.norm(X[-1] - oracle))
        q4 = (3 * n) // 4
        return float(np.max(np.linalg.norm(X[q4:] - X[-1], axis=1)))
    if name == "anchor-distance":
        _need(traj.hz.shape[1] > 0, name, "no probe points recorded")
        half = n // 2
        worst = 0.0
        for j in range(traj.hz.shape[1]):
            h = traj.hz[:, j]
            var = float(np.sum(np.maximum(np.diff(h[half:]), 0.0)))
            worst = max(worst, var / (1.0 + float(np.max(h))))
        return worst
    if name == "penalty-integral":
        c = traj.cum_beta_psi
        if c[-1] == 0.0:
            return 0.0
        return float((c[-1] - c[n // 2]) / c[-1])
    if name == "penalty-decay":
        bp = traj.beta_psi
        if bp[0] == 0.0:
            return 0.0 if bp[-1] == 0.0 else math.inf
        return float(bp[-1] / bp[0])
    if name == "minimizing":
        _need(prob is not None and prob.phi is not None, name, "system has no objective phi")
        val = float(traj.psi[-1]) / PSI_TOL
        if oracle is not None:
            ref = float(prob.phi(oracle))
            val = max(val, abs(float(traj.phi[-1]) - ref) / (1.0 + abs(ref)) / PHI_TOL)
        return val
    _need(oracle is not None, name, "needs a reference solution")
    dist = float(np.linalg.norm(x[-1] - oracle))
    if name == "hierarchical-limit":
        _need(is_grad and prob.parameterization != EPSILON, name, "needs a gradient system in beta form")
        return dist
    if name == "strong-limit":
        _need(traj.meta.get("modulus", 0.0) > 0.0, name,
              "operator is not strongly monotone (modulus 0)")
        return dist
    if name in ("rescaled-limit", "compact-limit"):
        _need(is_grad and prob.parameterization == EPSILON, name, "needs a gradient system in epsilon form")
        return dist
    raise TagError(f"unknown tag {name!r}; known tags: {', '.join(TAGS)}")


def summarize(traj, oracle=None, tags=(), refinement_table=()):
    """Report for ``traj``; raises :class:`TagError` for an inapplicable tag."""
    for name in tags:
        if name not in THRESHOLDS:
            raise TagError(f"unknown tag {name!r}; known tags: {', '.join(TAGS)}")
    if oracle is not None:
        oracle = np.asarray(oracle, dtype=float)
    results = []
    for name in tags:
        value = _check(traj, name, oracle)
        thr = THRESHOLDS[name]
        results.append(TagResult(name, bool(value <= thr), float(value), thr))
    cr = convergence_report(traj, oracle)
    diag = {
        "t_end": float(traj.times[-1]),
        "steps": len(traj) - 1,
        "phi": float(traj.phi[-1]),
        "psi": float(traj.psi[-1]),
        "beta": float(traj.beta[-1]),
        "beta_psi": float(traj.beta_psi[-1]),
        "e1": float(traj.e1[-1]),
        "e2": float(traj.e2[-1]),
        "cum_beta_psi": cr.cum_beta_psi_final,
        "cum_beta_psi_peak": cr.cum_beta_psi_peak,
        "step_norm": cr.velocity_final,
        "state_amplitude": cr.state_amplitude,
        "ergodic_norm": cr.ergodic_norm_final,
        "hz_tail_slope": list(cr.hz_tail_slope),
        "hz_positive_variation": list(cr.hz_positive_variation),
    }
    if oracle is not None:
        diag["distance_to_limit"] = cr.distance_to_limit
    table = tuple((float(h), tuple(float(v) for v in s)) for h, s in refinement_table)
    return Report(cr.verdict, tuple(results), tuple(float(v) for v in traj.states[-1]), diag, table)
