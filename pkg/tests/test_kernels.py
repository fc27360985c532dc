"""Compiled kernels against the NumPy fallback."""
import os
import subprocess
import sys

import numpy as np
import pytest

from hierflow import _fallback, kernels
from hierflow.solvers import dd_assemble, monolithic_solve, power_sequence

compiled = pytest.mark.skipif(kernels.BACKEND != "compiled", reason="extension not built")


def _flow_inputs(seed, n=6, steps=300, theta=1.0):
    g = np.random.default_rng(seed)
    B = g.standard_normal((n, n))
    Ma = B @ B.T + np.eye(n) + (g.standard_normal((n, n)) if theta != 1.0 else 0)
    A = g.standard_normal((2, n))
    Mb = A.T @ A
    wa = np.ones(steps)
    wb = (1.0 + 0.01 * np.arange(1, steps + 1)) ** 2
    return (np.ascontiguousarray(Ma), g.standard_normal(n), Mb, g.standard_normal(n),
            wa, wb, g.standard_normal(n), 0.01, theta)


@compiled
@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("theta", [1.0, 0.5, 0.75])
def test_linear_flow_backends_agree(seed, theta):
    args = _flow_inputs(seed, theta=theta)
    xs_c, r_c = kernels.linear_implicit_flow(*args)
    xs_p, r_p = _fallback.linear_implicit_flow(*args)
    assert np.allclose(np.asarray(xs_c), xs_p, rtol=1e-11, atol=1e-12)
    assert np.allclose(np.asarray(r_c), r_p, rtol=1e-6, atol=1e-9)


def _dd_args(n=41, split=20, iters=300):
    cp = dd_assemble(n, split, lambda x: 1.0 + x)
    ref = monolithic_solve(n, cp.source)
    r1, r2 = cp.split_vector(ref)
    lo1, di1, up1 = (np.ascontiguousarray(v) for v in cp.band1)
    lo2, di2, up2 = (np.ascontiguousarray(v) for v in cp.band2)
    return (lo1, di1, up1, lo2, di2, up2, cp.h1, cp.h2, split - 1, 0, 1.0,
            np.repeat(power_sequence(iters), 3), np.zeros(split), np.zeros(n - split), r1, r2)


@compiled
def test_dd_backends_agree():
    out_c = kernels.dd_iterate(*_dd_args())
    out_p = _fallback.dd_iterate(*_dd_args())
    for a, b in zip(out_c, out_p):
        assert np.allclose(np.asarray(a), np.asarray(b), rtol=1e-10, atol=1e-13)


def test_fallback_linear_flow_exact_step():
    # one backward Euler step of x' = -x from 1 with h = 0.5
    one = np.ones((1, 1))
    xs, _ = _fallback.linear_implicit_flow(one, np.zeros(1), 0 * one, np.zeros(1),
                                           np.ones(1), np.ones(1), np.ones(1), 0.5, 1.0)
    assert np.allclose(xs[:, 0], [1.0, 2.0 / 3.0])


def test_environment_switch_selects_fallback():
    env = dict(os.environ, HIERFLOW_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from hierflow import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
