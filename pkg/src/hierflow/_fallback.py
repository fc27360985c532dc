"""NumPy/SciPy versions of the compiled loops in ``_kernels.pyx``."""
import numpy as np
from scipy.linalg import solve_banded


def linear_implicit_flow(Ma, qa, Mb, qb, wa, wb, x0, h, theta):
    """Implicit steps of ``x' + wa (Ma x + qa) + wb (Mb x + qb) = 0``.

    The ``a`` operator is treated by the theta-method, the ``b`` part fully
    implicitly.  Returns the states (n+1, d) and per-step linear residuals.
    """
    d = x0.shape[0]
    n = wa.shape[0]
    states = np.empty((n + 1, d))
    resid = np.zeros(n + 1)
    states[0] = x0
    eye = np.eye(d) / h
    x = x0
    # blow-up is reported by the caller from the non-finite states
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            A = eye + theta * wa[k] * Ma + wb[k] * Mb
            rhs = x / h - (1.0 - theta) * wa[k] * (Ma @ x) - wa[k] * qa - wb[k] * qb
            try:
                x = np.linalg.solve(A, rhs)
            except np.linalg.LinAlgError:
                raise ZeroDivisionError(f"singular implicit step at index {k}") from None
            resid[k + 1] = np.linalg.norm(A @ x - rhs)
            states[k + 1] = x
    return states, resid


def _banded(lo, di, up):
    n = di.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = up[:-1]
    ab[1] = di
    ab[2, :-1] = lo[1:]
    return ab


def _tri_matvec(lo, di, up, v):
    out = di * v
    out[1:] += lo[1:] * v[:-1]
    out[:-1] += up[:-1] * v[1:]
    return out


def dd_iterate(lo1, di1, up1, lo2, di2, up2, g1, g2, i1, i2, alpha, betas, u1, u2, ref1, ref2):
    """Alternating subdomain solves with penalised interface coupling."""
    u1 = np.array(u1, dtype=float)
    u2 = np.array(u2, dtype=float)
    iters = betas.shape[0]
    jumps = np.empty(iters)
    errs = np.empty(iters)
    ab1 = _banded((1 + alpha) * lo1, (1 + alpha) * di1, (1 + alpha) * up1)
    ab2 = _banded((1 + alpha) * lo2, (1 + alpha) * di2, (1 + alpha) * up2)
    for k, b in enumerate(betas):
        m1 = ab1.copy()
        m1[1, i1] += b
        r1 = g1 + alpha * _tri_matvec(lo1, di1, up1, u1)
        r1[i1] += b * u2[i2]
        u1 = solve_banded((1, 1), m1, r1)
        m2 = ab2.copy()
        m2[1, i2] += b
        r2 = g2 + alpha * _tri_matvec(lo2, di2, up2, u2)
        r2[i2] += b * u1[i1]
        u2 = solve_banded((1, 1), m2, r2)
        jumps[k] = abs(u1[i1] - u2[i2])
        errs[k] = max(np.max(np.abs(u1 - ref1)), np.max(np.abs(u2 - ref2)))
    return u1, u2, jumps, errs
