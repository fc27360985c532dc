"""Regenerate the scenario files in ``scenarios/`` from fixed seeds.

Matrix entries are rounded to four decimals so the files stay readable;
the rounded data is what every test and benchmark uses.
"""
import math
from pathlib import Path

import numpy as np

from hierflow.scenario import FunctionSpec, Scenario, serialize

OUT = Path(__file__).resolve().parent.parent / "scenarios"


def _r(a):
    return tuple(float(v) for v in np.round(np.asarray(a, dtype=float).ravel(), 4))


def hierarchical_data(seed=0, n=5, m=2):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    Q = np.round(B @ B.T + np.eye(n), 4)
    c = rng.standard_normal(n)
    A = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    phi = FunctionSpec("quadratic", (("rows", n), ("Q", _r(Q)), ("c", _r(c))))
    psi = FunctionSpec("least_squares", (("rows", m), ("A", _r(A)), ("b", _r(b))))
    return phi, psi


def strong_data(seed=3, n=4, m=2):
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((n, n))
    M = np.eye(n) + np.round((S - S.T) / 2, 4)
    q = rng.standard_normal(n)
    A = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    op = FunctionSpec("affine", (("rows", n), ("M", _r(M)), ("q", _r(q))))
    psi = FunctionSpec("sqdist_affine", (("rows", m), ("A", _r(A)), ("b", _r(b))))
    return op, psi


def main():
    OUT.mkdir(exist_ok=True)
    phi, psi = hierarchical_data()
    zero5 = (0.0,) * 5
    files = {
        "hierarchical.scn": Scenario(
            "gradient", "beta", 5, phi, None, psi, "power 1 2", 0.01, 200.0, zero5,
            oracle="limit",
            tags=("hierarchical-limit", "minimizing", "penalty-decay", "penalty-integral"),
            csv="hierarchical.csv", report="hierarchical.report"),
        "rescaled.scn": Scenario(
            "gradient", "epsilon", 5, phi, None, psi, "dual power 1 2", 0.01, 72.0, zero5,
            oracle="limit", tags=("rescaled-limit", "compact-limit"),
            csv="rescaled.csv", report="rescaled.report"),
        "rotation.scn": Scenario(
            "monotone", "beta", 2, None, FunctionSpec("rotation", (("angle", math.pi / 2),)),
            FunctionSpec("zero"), "const 1", 0.001, 100.0, (1.0, 0.0), theta=0.5,
            probes=((0.0, 0.0),), oracle="vi",
            tags=("ergodic-mean", "anchor-distance", "penalty-integral"),
            csv="rotation.csv", report="rotation.report"),
        "strong_monotone.scn": Scenario(
            "monotone", "beta", 4, None, *strong_data(), "power 1 2", 0.01, 50.0, (0.0,) * 4,
            oracle="vi", tags=("strong-limit", "penalty-decay"),
            csv="strong_monotone.csv", report="strong_monotone.report"),
        "golden.scn": Scenario(
            "gradient", "beta", 5, phi, None, psi, "power 1 2", 0.05, 1.0, (1.0, 0.0, 0.0, 0.0, 0.0),
            refinements=2, probes=((0.0,) * 5,), tags=("penalty-decay",),
            csv="golden.csv", report="golden.report"),
    }
    for name, sc in files.items():
        (OUT / name).write_text(serialize(sc), encoding="utf-8")


if __name__ == "__main__":
    main()
