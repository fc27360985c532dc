"""Declarative scenario files: parsing, validation, canonical form and assembly.

A scenario is a :mod:`hierflow.kv` document with these sections, in this
canonical order::

    [problem]    kind = "gradient" | "monotone", parameterization, dim
    [phi]        objective (gradient systems, or the subdifferential operator)
    [operator]   monotone systems: type = "affine" | "rotation" | "subdifferential"
    [psi]        penalty function
    [schedule]   law = "power 1 2"
    [run]        h, t_end, x0, theta, refinements
    [probes]     rows, points (row-major)
    [oracle]     method = "limit" | "vi" | "none"
    [report]     tags = "comma, separated"
    [output]     csv, report

Matrices are flat row-major arrays with a ``rows`` key.  :func:`serialize`
produces the canonical text; ``parse(serialize(s)) == s`` for every valid
scenario.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from . import convex as cx
from . import kv
from .integrator import AffineOperator, GradientProblem, MonotoneProblem, Rotation2D, SubdifferentialOf
from .kv import Diagnostic, KVError
from .report import TAGS
from .schedules import BETA, EPSILON, parse_schedule

__all__ = ["Scenario", "FunctionSpec", "ScenarioError", "parse_scenario", "serialize", "build_problem"]


class ScenarioError(KVError):
    pass


# parameter layout per function type: (key, kind) with kind in
# "matrix" (needs rows), "vector", "scalar"
FUNCTION_TYPES = {
    "zero": (),
    "quadratic": (("Q", "matrix"), ("c", "vector"), ("r", "scalar")),
    "least_squares": (("A", "matrix"), ("b", "vector")),
    "abs": (("weight", "scalar"),),
    "indicator_affine": (("A", "matrix"), ("b", "vector")),
    "indicator_box": (("lo", "vector"), ("hi", "vector")),
    "ball": (("radius", "scalar"),),
    "sqdist_affine": (("A", "matrix"), ("b", "vector")),
    "sqdist_box": (("lo", "vector"), ("hi", "vector")),
    "support_ball": (("radius", "scalar"),),
}
OPTIONAL = {("quadratic", "c"), ("quadratic", "r"), ("abs", "weight"), ("ball", "radius"),
            ("support_ball", "radius"), ("affine", "q")}
OPERATOR_TYPES = {
    "affine": (("M", "matrix"), ("q", "vector")),
    "rotation": (("angle", "scalar"),),
    "subdifferential": (),
}
SECTION_ORDER = ("problem", "phi", "operator", "psi", "schedule", "run", "probes", "oracle", "report", "output")
SECTION_KEYS = {
    "problem": ("kind", "parameterization", "dim"),
    "schedule": ("law",),
    "run": ("h", "t_end", "x0", "theta", "refinements"),
    "probes": ("rows", "points"),
    "oracle": ("method",),
    "report": ("tags",),
    "output": ("csv", "report"),
}


@dataclass(frozen=True)
class FunctionSpec:
    """A catalog function or operator: ``type`` plus ``(key, value)`` pairs in canonical order."""

    type: str
    params: tuple = ()

    def get(self, key, default=None):
        for k, v in self.params:
            if k == key:
                return v
        return default


@dataclass(frozen=True)
class Scenario:
    kind: str
    parameterization: str
    dim: int
    phi: FunctionSpec | None
    operator: FunctionSpec | None
    psi: FunctionSpec
    schedule: str
    h: float
    t_end: float
    x0: tuple
    theta: float = 1.0
    refinements: int = 0
    probes: tuple = ()
    oracle: str = "none"
    tags: tuple = ()
    csv: str = "trajectory.csv"
    report: str = "report.txt"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


class _Collector:
    def __init__(self, doc):
        self.doc = doc
        self.errors = []

    def err(self, line, msg):
        self.errors.append(Diagnostic(line, msg))

    def line_of(self, section, key=None):
        body = self.doc.get(section, {})
        if key is not None and key in body:
            return body[key][1]
        lines = [ln for _, ln in body.values()]
        return min(lines) if lines else 0

    def value(self, section, key, kind, default=None, required=True):
        body = self.doc.get(section, {})
        if key not in body:
            if required and default is None:
                self.err(self.line_of(section), f"[{section}] missing key {key!r}")
            return default
        v, line = body[key]
        try:
            return _coerce(v, kind)
        except ValueError as exc:
            self.err(line, f"[{section}] {key}: {exc}")
            return default


def _coerce(v, kind):
    if kind == "str":
        if not isinstance(v, str):
            raise ValueError("expected a quoted string")
        return v
    if kind == "int":
        if not isinstance(v, int):
            raise ValueError("expected an integer")
        return v
    if kind == "float":
        if isinstance(v, (list, str)):
            raise ValueError("expected a number")
        v = float(v)
        if not math.isfinite(v):
            raise ValueError("expected a finite number")
        return v
    if kind == "array":
        if not isinstance(v, list):
            raise ValueError("expected a bracketed array")
        out = tuple(float(x) for x in v)
        if not all(math.isfinite(x) for x in out):
            raise ValueError("array entries must be finite")
        return out
    raise AssertionError(kind)


def _function(col, section, dim, types):
    body = col.doc.get(section, {})
    before = len(col.errors)
    ftype = col.value(section, "type", "str")
    if ftype is None:
        return None
    if ftype not in types:
        col.err(col.line_of(section, "type"), f"[{section}] unknown type {ftype!r} (known: {', '.join(types)})")
        return None
    layout = types[ftype]
    allowed = {"type"} | {k for k, _ in layout}
    if any(kind == "matrix" for _, kind in layout):
        allowed.add("rows")
    for key, (_, line) in body.items():
        if key not in allowed:
            col.err(line, f"[{section}] unknown key {key!r} for type {ftype!r}")
    params = []
    rows = None
    if "rows" in allowed:
        rows = col.value(section, "rows", "int")
        if rows is not None:
            if rows < 1:
                col.err(col.line_of(section, "rows"), f"[{section}] rows must be positive")
                rows = None
            else:
                params.append(("rows", rows))
    for key, kind in layout:
        optional = (ftype, key) in OPTIONAL
        if key not in body:
            if not optional:
                col.err(col.line_of(section), f"[{section}] missing key {key!r}")
            continue
        line = body[key][1]
        if kind == "scalar":
            v = col.value(section, key, "float")
            if v is not None:
                params.append((key, v))
            continue
        v = col.value(section, key, "array")
        if v is None:
            continue
        if kind == "matrix":
            if rows is None:
                continue
            if len(v) % rows or len(v) // rows != dim:
                col.err(line, f"[{section}] {key}: {len(v)} entries do not form a {rows} x {dim} matrix")
                continue
        else:
            want = rows if key == "b" else dim
            if want is None:
                continue
            if len(v) != want:
                col.err(line, f"[{section}] {key}: expected {want} entries, got {len(v)}")
                continue
        params.append((key, v))
    fspec = FunctionSpec(ftype, tuple(params))
    if len(col.errors) == before:
        try:
            _build_function(fspec, dim) if types is FUNCTION_TYPES else _build_operator(fspec, dim, None)
        except (ValueError, np.linalg.LinAlgError) as exc:
            col.err(col.line_of(section, "type"), f"[{section}] {exc}")
    return fspec


def parse_scenario(text):
    """Validated :class:`Scenario`; raises :class:`ScenarioError` with line-numbered diagnostics."""
    try:
        doc = kv.loads(text)
    except KVError as exc:
        raise ScenarioError(exc.diagnostics) from None
    col = _Collector(doc)
    for key, (_, line) in doc[""].items():
        col.err(line, f"key {key!r} outside any section")
    for name in doc:
        if name and name not in SECTION_ORDER:
            col.err(col.line_of(name), f"unknown section [{name}]")
    for name, keys in SECTION_KEYS.items():
        for key, (_, line) in doc.get(name, {}).items():
            if key not in keys:
                col.err(line, f"[{name}] unknown key {key!r}")

    kind = col.value("problem", "kind", "str")
    if kind is not None and kind not in ("gradient", "monotone"):
        col.err(col.line_of("problem", "kind"), f"[problem] kind must be \"gradient\" or \"monotone\", got {kind!r}")
    param = col.value("problem", "parameterization", "str", default=BETA)
    if param not in (BETA, EPSILON):
        col.err(col.line_of("problem", "parameterization"), f"[problem] unknown parameterization {param!r}")
    if kind == "monotone" and param != BETA:
        col.err(col.line_of("problem", "parameterization"), "[problem] monotone systems use the beta form")
    dim = col.value("problem", "dim", "int")
    if dim is not None and dim < 1:
        col.err(col.line_of("problem", "dim"), "[problem] dim must be positive")
        dim = None
    if dim is None:
        raise ScenarioError(col.errors or [Diagnostic(0, "[problem] dim is required")])

    phi = op = None
    if kind == "gradient":
        if "operator" in doc:
            col.err(col.line_of("operator"), "[operator] only allowed for monotone systems")
        phi = _function(col, "phi", dim, FUNCTION_TYPES)
    elif kind == "monotone":
        op = _function(col, "operator", dim, OPERATOR_TYPES)
        if op is not None and op.type == "subdifferential":
            phi = _function(col, "phi", dim, FUNCTION_TYPES)
        elif "phi" in doc:
            col.err(col.line_of("phi"), "[phi] only used with a subdifferential operator")
        if op is not None and op.type == "rotation" and dim != 2:
            col.err(col.line_of("problem", "dim"), "[problem] rotation operator needs dim = 2")
    psi = _function(col, "psi", dim, FUNCTION_TYPES)

    law = col.value("schedule", "law", "str")
    if law is not None:
        try:
            parse_schedule(law, EPSILON if param == EPSILON else BETA)
        except ValueError as exc:
            col.err(col.line_of("schedule", "law"), f"[schedule] law: {exc}")

    h = col.value("run", "h", "float")
    if h is not None and not h > 0:
        col.err(col.line_of("run", "h"), f"[run] h must be positive, got {h!r}")
    t_end = col.value("run", "t_end", "float")
    if t_end is not None and not t_end > 0:
        col.err(col.line_of("run", "t_end"), f"[run] t_end must be positive, got {t_end!r}")
    if h is not None and t_end is not None and h > 0 and t_end > 0:
        n = round(t_end / h)
        if n < 1 or abs(n * h - t_end) > 1e-9 * max(1.0, t_end):
            col.err(col.line_of("run", "t_end"), "[run] t_end must be a whole number of steps h")
    x0 = col.value("run", "x0", "array")
    if x0 is not None and len(x0) != dim:
        col.err(col.line_of("run", "x0"), f"[run] x0: expected {dim} entries, got {len(x0)}")
    theta = col.value("run", "theta", "float", default=1.0, required=False)
    if not 0.5 <= theta <= 1.0:
        col.err(col.line_of("run", "theta"), "[run] theta must lie in [0.5, 1]")
    if theta != 1.0 and kind != "monotone":
        col.err(col.line_of("run", "theta"), "[run] theta is only available for monotone systems")
    refinements = col.value("run", "refinements", "int", default=0, required=False)
    if refinements < 0:
        col.err(col.line_of("run", "refinements"), "[run] refinements must be nonnegative")

    probes = ()
    if "probes" in doc:
        rows = col.value("probes", "rows", "int")
        pts = col.value("probes", "points", "array")
        if rows is not None and pts is not None:
            if rows < 1 or len(pts) != rows * dim:
                col.err(col.line_of("probes", "points"), f"[probes] points: expected {rows} x {dim} entries")
            else:
                probes = tuple(tuple(pts[i * dim:(i + 1) * dim]) for i in range(rows))

    oracle = col.value("oracle", "method", "str", default="none", required=False)
    if oracle not in ("limit", "vi", "none"):
        col.err(col.line_of("oracle", "method"), f"[oracle] unknown method {oracle!r}")
    if oracle == "limit" and kind != "gradient" and not (op is not None and op.type == "subdifferential"):
        col.err(col.line_of("oracle", "method"), "[oracle] limit oracle needs an objective phi")
    if oracle == "vi" and kind != "monotone":
        col.err(col.line_of("oracle", "method"), "[oracle] vi oracle needs a monotone system")

    tags_raw = col.value("report", "tags", "str", default="", required=False)
    tags = tuple(t.strip() for t in tags_raw.split(",") if t.strip())
    for t in tags:
        if t not in TAGS:
            col.err(col.line_of("report", "tags"), f"[report] unknown tag {t!r}")
    csv = col.value("output", "csv", "str", default="trajectory.csv", required=False)
    rep = col.value("output", "report", "str", default="report.txt", required=False)

    if col.errors:
        raise ScenarioError(sorted(col.errors))
    return Scenario(kind, param, dim, phi, op, psi, law, h, t_end, x0, theta, refinements,
                    probes, oracle, tags, csv, rep)


# ---------------------------------------------------------------------------
# Canonical text
# ---------------------------------------------------------------------------


def _function_body(fspec):
    body = {"type": fspec.type}
    for k, v in fspec.params:
        body[k] = list(v) if isinstance(v, tuple) else v
    return body


def serialize(sc):
    doc = {"": {}}
    doc["problem"] = {"kind": sc.kind, "parameterization": sc.parameterization, "dim": sc.dim}
    if sc.phi is not None:
        doc["phi"] = _function_body(sc.phi)
    if sc.operator is not None:
        doc["operator"] = _function_body(sc.operator)
    doc["psi"] = _function_body(sc.psi)
    doc["schedule"] = {"law": sc.schedule}
    doc["run"] = {"h": sc.h, "t_end": sc.t_end, "x0": list(sc.x0), "theta": sc.theta,
                  "refinements": sc.refinements}
    if sc.probes:
        doc["probes"] = {"rows": len(sc.probes), "points": [v for p in sc.probes for v in p]}
    doc["oracle"] = {"method": sc.oracle}
    doc["report"] = {"tags": ", ".join(sc.tags)}
    doc["output"] = {"csv": sc.csv, "report": sc.report}
    return kv.dumps(doc)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def _mat(fspec, key, dim):
    flat = np.asarray(fspec.get(key), dtype=float)
    return flat.reshape(fspec.get("rows"), dim)


def _build_function(fspec, dim):
    t = fspec.type
    if t == "zero":
        return cx.Zero(dim)
    if t == "quadratic":
        Q = _mat(fspec, "Q", dim)
        if Q.shape[0] != dim:
            raise ValueError("Q must be square")
        c = fspec.get("c")
        return cx.Quadratic(Q, None if c is None else np.asarray(c), fspec.get("r", 0.0))
    if t == "least_squares":
        return cx.least_squares(_mat(fspec, "A", dim), np.asarray(fspec.get("b")))
    if t == "abs":
        return cx.AbsoluteSum(dim, fspec.get("weight", 1.0))
    if t == "indicator_affine":
        return cx.IndicatorAffine(_mat(fspec, "A", dim), np.asarray(fspec.get("b")))
    if t == "indicator_box":
        return cx.IndicatorBox(np.asarray(fspec.get("lo")), np.asarray(fspec.get("hi")))
    if t == "ball":
        return cx.IndicatorBall(dim, fspec.get("radius", 1.0))
    if t == "sqdist_affine":
        return cx.SqDistToAffine(_mat(fspec, "A", dim), np.asarray(fspec.get("b")))
    if t == "sqdist_box":
        return cx.SqDistToBox(np.asarray(fspec.get("lo")), np.asarray(fspec.get("hi")))
    if t == "support_ball":
        return cx.SupportOfBall(dim, fspec.get("radius", 1.0))
    raise ValueError(f"unknown function type {t!r}")


def _build_operator(fspec, dim, phi):
    if fspec.type == "affine":
        M = _mat(fspec, "M", dim)
        if M.shape[0] != dim:
            raise ValueError("M must be square")
        q = fspec.get("q")
        return AffineOperator(M, None if q is None else np.asarray(q))
    if fspec.type == "rotation":
        if dim != 2:
            raise ValueError("rotation operator needs dim = 2")
        angle = fspec.get("angle")
        if abs(angle) > math.pi / 2 + 1e-12:
            raise ValueError("rotation angle beyond pi/2 is not monotone")
        return Rotation2D(angle)
    if fspec.type == "subdifferential":
        return None if phi is None else SubdifferentialOf(phi)
    raise ValueError(f"unknown operator type {fspec.type!r}")


def build_problem(sc):
    """Problem object described by a validated scenario."""
    direction = EPSILON if sc.parameterization == EPSILON else BETA
    schedule = parse_schedule(sc.schedule, direction)
    psi = _build_function(sc.psi, sc.dim)
    phi = _build_function(sc.phi, sc.dim) if sc.phi is not None else None
    if sc.kind == "gradient":
        return GradientProblem(phi, psi, schedule, sc.parameterization)
    return MonotoneProblem(_build_operator(sc.operator, sc.dim, phi), psi, schedule)
