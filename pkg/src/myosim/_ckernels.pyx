# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: cell sub-stepping and tridiagonal sweeps.

Same signatures and arithmetic as ``_kernels_py``; the cell loop runs
node-major so each node's trajectory stays in registers.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1

from .errors import SingularSystemError

cnp.import_array()

PARAM_ORDER = ("g_na", "g_k", "g_l", "e_na", "e_k", "e_l", "c_m", "v_half", "k_a2", "tau_a2")


cdef inline double _alin(double u, double k, double s) noexcept nogil:
    if u == 0.0:
        return k * s
    return k * u / (-expm1(-u / s))


cdef inline void _rhs(double v, double m, double h, double n, double a2, double istim,
                      const double* p, double* out) noexcept nogil:
    cdef double am = _alin(v + 50.0, 0.1, 10.0)
    cdef double bm = 4.0 * exp(-(v + 75.0) / 18.0)
    cdef double ah = 0.07 * exp(-(v + 75.0) / 20.0)
    cdef double bh = 1.0 / (1.0 + exp(-(v + 45.0) / 10.0))
    cdef double an = _alin(v + 65.0, 0.01, 10.0)
    cdef double bn = 0.125 * exp(-(v + 75.0) / 80.0)
    cdef double iion = (p[0] * m * m * m * h * (v - p[3])
                        + p[1] * n * n * n * n * (v - p[4])
                        + p[2] * (v - p[5])
                        - istim)
    out[0] = -iion / p[6]
    out[1] = am * (1.0 - m) - bm * m
    out[2] = ah * (1.0 - h) - bh * h
    out[3] = an * (1.0 - n) - bn * n
    out[4] = (1.0 / (1.0 + exp(-(v - p[7]) / p[8])) - a2) / p[9]


def hh_rhs(double[:, ::1] y, i_stim, p):
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[::1] st = np.ascontiguousarray(np.broadcast_to(i_stim, (y.shape[1],)), dtype=np.float64)
    out_arr = np.empty((5, y.shape[1]))
    cdef double[:, ::1] out = out_arr
    cdef double f[5]
    cdef Py_ssize_t j, r
    for j in range(y.shape[1]):
        _rhs(y[0, j], y[1, j], y[2, j], y[3, j], y[4, j], st[j], &pv[0], f)
        for r in range(5):
            out[r, j] = f[r]
    return out_arr


def hh_advance(double[:, ::1] y, i_stim, double dt, long nsteps, bint heun, p):
    """Advance ``y`` in place by ``nsteps`` explicit Euler or Heun steps."""
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[::1] st = np.ascontiguousarray(np.broadcast_to(i_stim, (y.shape[1],)), dtype=np.float64)
    cdef Py_ssize_t j, r
    cdef long k
    cdef double s[5]
    cdef double q[5]
    cdef double f0[5]
    cdef double f1[5]
    cdef double half = 0.5 * dt
    with nogil:
        for j in range(y.shape[1]):
            for r in range(5):
                s[r] = y[r, j]
            for k in range(nsteps):
                _rhs(s[0], s[1], s[2], s[3], s[4], st[j], &pv[0], f0)
                if heun:
                    for r in range(5):
                        q[r] = s[r] + dt * f0[r]
                    _rhs(q[0], q[1], q[2], q[3], q[4], st[j], &pv[0], f1)
                    for r in range(5):
                        s[r] = s[r] + half * (f0[r] + f1[r])
                else:
                    for r in range(5):
                        s[r] = s[r] + dt * f0[r]
            for r in range(5):
                y[r, j] = s[r]


cdef int _thomas(const double* a, const double* b, const double* c, const double* d,
                 double* cp, double* x, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double den
    if b[0] == 0.0:
        return -1
    cp[0] = c[0] / b[0] if n > 1 else 0.0
    x[0] = d[0] / b[0]
    for i in range(1, n):
        den = b[i] - a[i] * cp[i - 1]
        if den == 0.0:
            return -1
        cp[i] = c[i] / den if i < n - 1 else 0.0
        x[i] = (d[i] - a[i] * x[i - 1]) / den
    for i in range(n - 2, -1, -1):
        x[i] = x[i] - cp[i] * x[i + 1]
    return 0


def thomas(sub, diag, sup, rhs):
    """Solve one tridiagonal system. ``sub[0]`` and ``sup[-1]`` are ignored."""
    cdef const double[::1] a = np.ascontiguousarray(sub, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(diag, dtype=np.float64)
    cdef const double[::1] c = np.ascontiguousarray(sup, dtype=np.float64)
    cdef const double[::1] d = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef Py_ssize_t n = b.shape[0]
    x_arr = np.empty(n)
    cdef double[::1] x = x_arr
    cdef double[::1] cp = np.empty(n)
    cdef int rc
    with nogil:
        rc = _thomas(&a[0], &b[0], &c[0], &d[0], &cp[0], &x[0], n)
    if rc != 0:
        raise SingularSystemError()
    return x_arr


def thomas_batch(sub, diag, sup, rhs):
    """Solve ``m`` independent systems stored row-wise in ``(m, n)`` arrays."""
    cdef const double[:, ::1] a = np.ascontiguousarray(sub, dtype=np.float64)
    cdef const double[:, ::1] b = np.ascontiguousarray(diag, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(sup, dtype=np.float64)
    cdef const double[:, ::1] d = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef Py_ssize_t m = b.shape[0], n = b.shape[1], r
    x_arr = np.empty((m, n))
    cdef double[:, ::1] x = x_arr
    cdef double[::1] cp = np.empty(n)
    cdef int rc = 0
    with nogil:
        for r in range(m):
            rc = _thomas(&a[r, 0], &b[r, 0], &c[r, 0], &d[r, 0], &cp[0], &x[r, 0], n)
            if rc != 0:
                break
    if rc != 0:
        raise SingularSystemError()
    return x_arr
