# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled time-stepping loops.  Signatures mirror ``_fallback``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


cdef int _lu_solve(double[:, ::1] A, double[::1] b, double[::1] x, int n) noexcept nogil:
    """Gaussian elimination with partial pivoting; A and b are overwritten."""
    cdef int i, j, k, piv
    cdef double amax, tmp, f
    for k in range(n):
        piv = k
        amax = fabs(A[k, k])
        for i in range(k + 1, n):
            if fabs(A[i, k]) > amax:
                amax = fabs(A[i, k])
                piv = i
        if amax == 0.0:
            return -1
        if piv != k:
            for j in range(n):
                tmp = A[k, j]
                A[k, j] = A[piv, j]
                A[piv, j] = tmp
            tmp = b[k]
            b[k] = b[piv]
            b[piv] = tmp
        for i in range(k + 1, n):
            f = A[i, k] / A[k, k]
            if f != 0.0:
                for j in range(k, n):
                    A[i, j] -= f * A[k, j]
                b[i] -= f * b[k]
    for i in range(n - 1, -1, -1):
        tmp = b[i]
        for j in range(i + 1, n):
            tmp -= A[i, j] * x[j]
        x[i] = tmp / A[i, i]
    return 0


def linear_implicit_flow(double[:, ::1] Ma, double[::1] qa, double[:, ::1] Mb, double[::1] qb,
                         double[::1] wa, double[::1] wb, double[::1] x0, double h, double theta):
    cdef int d = x0.shape[0]
    cdef int n = wa.shape[0]
    cdef int k, i, j, status = 0
    cdef double s, r, rnorm
    states_arr = np.empty((n + 1, d))
    resid_arr = np.zeros(n + 1)
    cdef double[:, ::1] states = states_arr
    cdef double[::1] resid = resid_arr
    cdef double[:, ::1] A = np.empty((d, d))
    cdef double[:, ::1] A0 = np.empty((d, d))
    cdef double[::1] rhs = np.empty(d)
    cdef double[::1] rhs0 = np.empty(d)
    cdef double[::1] xn = np.empty(d)
    for i in range(d):
        states[0, i] = x0[i]
    with nogil:
        for k in range(n):
            for i in range(d):
                s = 0.0
                for j in range(d):
                    A0[i, j] = theta * wa[k] * Ma[i, j] + wb[k] * Mb[i, j]
                    s += Ma[i, j] * states[k, j]
                A0[i, i] += 1.0 / h
                rhs0[i] = states[k, i] / h - (1.0 - theta) * wa[k] * s - wa[k] * qa[i] - wb[k] * qb[i]
            for i in range(d):
                rhs[i] = rhs0[i]
                for j in range(d):
                    A[i, j] = A0[i, j]
            if _lu_solve(A, rhs, xn, d) != 0:
                status = k + 1
                break
            rnorm = 0.0
            for i in range(d):
                r = -rhs0[i]
                for j in range(d):
                    r += A0[i, j] * xn[j]
                rnorm += r * r
                states[k + 1, i] = xn[i]
            resid[k + 1] = sqrt(rnorm)
    if status:
        raise ZeroDivisionError(f"singular implicit step at index {status - 1}")
    return states_arr, resid_arr


cdef void _thomas(double[::1] lo, double[::1] di, double[::1] up, double[::1] rhs,
                  double[::1] cp, double[::1] x, int n) noexcept nogil:
    """Tridiagonal solve; lo[i] couples i to i-1, up[i] couples i to i+1."""
    cdef int i
    cdef double m
    cp[0] = up[0] / di[0]
    x[0] = rhs[0] / di[0]
    for i in range(1, n):
        m = di[i] - lo[i] * cp[i - 1]
        cp[i] = up[i] / m if i < n - 1 else 0.0
        x[i] = (rhs[i] - lo[i] * x[i - 1]) / m
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]


cdef void _tri_matvec(double[::1] lo, double[::1] di, double[::1] up, double[::1] v,
                      double[::1] out, int n) noexcept nogil:
    cdef int i
    for i in range(n):
        out[i] = di[i] * v[i]
        if i > 0:
            out[i] += lo[i] * v[i - 1]
        if i < n - 1:
            out[i] += up[i] * v[i + 1]


def dd_iterate(double[::1] lo1, double[::1] di1, double[::1] up1,
               double[::1] lo2, double[::1] di2, double[::1] up2,
               double[::1] g1, double[::1] g2, int i1, int i2,
               double alpha, double[::1] betas, double[::1] u1_in, double[::1] u2_in,
               double[::1] ref1, double[::1] ref2):
    cdef int n1 = g1.shape[0], n2 = g2.shape[0], iters = betas.shape[0]
    cdef int k, i
    cdef double b, err, e
    u1_arr = np.array(u1_in, copy=True)
    u2_arr = np.array(u2_in, copy=True)
    jumps_arr = np.empty(iters)
    errs_arr = np.empty(iters)
    cdef double[::1] u1 = u1_arr, u2 = u2_arr, jumps = jumps_arr, errs = errs_arr
    cdef double[::1] a1 = np.empty(n1), a2 = np.empty(n2)
    cdef double[::1] l1 = np.empty(n1), d1 = np.empty(n1), p1 = np.empty(n1)
    cdef double[::1] l2 = np.empty(n2), d2 = np.empty(n2), p2 = np.empty(n2)
    cdef double[::1] cp1 = np.empty(n1), cp2 = np.empty(n2)
    cdef double[::1] r1 = np.empty(n1), r2 = np.empty(n2)
    with nogil:
        for i in range(n1):
            l1[i] = (1.0 + alpha) * lo1[i]
            p1[i] = (1.0 + alpha) * up1[i]
        for i in range(n2):
            l2[i] = (1.0 + alpha) * lo2[i]
            p2[i] = (1.0 + alpha) * up2[i]
        for k in range(iters):
            b = betas[k]
            _tri_matvec(lo1, di1, up1, u1, a1, n1)
            for i in range(n1):
                d1[i] = (1.0 + alpha) * di1[i]
                r1[i] = g1[i] + alpha * a1[i]
            d1[i1] += b
            r1[i1] += b * u2[i2]
            _thomas(l1, d1, p1, r1, cp1, u1, n1)
            _tri_matvec(lo2, di2, up2, u2, a2, n2)
            for i in range(n2):
                d2[i] = (1.0 + alpha) * di2[i]
                r2[i] = g2[i] + alpha * a2[i]
            d2[i2] += b
            r2[i2] += b * u1[i1]
            _thomas(l2, d2, p2, r2, cp2, u2, n2)
            jumps[k] = fabs(u1[i1] - u2[i2])
            err = 0.0
            for i in range(n1):
                e = fabs(u1[i] - ref1[i])
                if e > err:
                    err = e
            for i in range(n2):
                e = fabs(u2[i] - ref2[i])
                if e > err:
                    err = e
            errs[k] = err
    return u1_arr, u2_arr, jumps_arr, errs_arr
