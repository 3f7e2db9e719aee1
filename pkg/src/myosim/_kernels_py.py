"""Pure numpy implementations of the hot kernels.

Mirrors ``_ckernels.pyx`` call for call. Used when the extension is not built
and as the reference side in backend comparison tests and benchmarks.

Cell state arrays have shape ``(5, n)`` with rows ``v, m, h, n, a2``.
Parameter vectors are ordered as ``PARAM_ORDER``.
"""
import numpy as np

from .errors import SingularSystemError

PARAM_ORDER = ("g_na", "g_k", "g_l", "e_na", "e_k", "e_l", "c_m", "v_half", "k_a2", "tau_a2")


def _alin(u, k, s):
    # k*u / (1 - exp(-u/s)), continuous at u == 0
    z = -np.expm1(-u / s)
    safe = np.where(u == 0.0, 1.0, z)
    return np.where(u == 0.0, k * s, k * u / safe)


def hh_rates(v):
    am = _alin(v + 50.0, 0.1, 10.0)
    bm = 4.0 * np.exp(-(v + 75.0) / 18.0)
    ah = 0.07 * np.exp(-(v + 75.0) / 20.0)
    bh = 1.0 / (1.0 + np.exp(-(v + 45.0) / 10.0))
    an = _alin(v + 65.0, 0.01, 10.0)
    bn = 0.125 * np.exp(-(v + 75.0) / 80.0)
    return am, bm, ah, bh, an, bn


def hh_ionic(y, i_stim, p):
    v, m, h, n = y[0], y[1], y[2], y[3]
    g_na, g_k, g_l, e_na, e_k, e_l = p[0], p[1], p[2], p[3], p[4], p[5]
    return (g_na * m * m * m * h * (v - e_na)
            + g_k * n * n * n * n * (v - e_k)
            + g_l * (v - e_l)
            - i_stim)


def hh_rhs(y, i_stim, p):
    v, m, h, n, a2 = y
    am, bm, ah, bh, an, bn = hh_rates(v)
    out = np.empty_like(y)
    out[0] = -hh_ionic(y, i_stim, p) / p[6]
    out[1] = am * (1.0 - m) - bm * m
    out[2] = ah * (1.0 - h) - bh * h
    out[3] = an * (1.0 - n) - bn * n
    out[4] = (1.0 / (1.0 + np.exp(-(v - p[7]) / p[8])) - a2) / p[9]
    return out


def hh_advance(y, i_stim, dt, nsteps, heun, p):
    """Advance ``y`` in place by ``nsteps`` explicit Euler or Heun steps."""
    p = np.asarray(p, dtype=np.float64)
    i_stim = np.asarray(i_stim, dtype=np.float64)
    for _ in range(int(nsteps)):
        f0 = hh_rhs(y, i_stim, p)
        if heun:
            pre = y + dt * f0
            f1 = hh_rhs(pre, i_stim, p)
            y += 0.5 * dt * (f0 + f1)
        else:
            y += dt * f0


def thomas(sub, diag, sup, rhs):
    """Solve one tridiagonal system. ``sub[0]`` and ``sup[-1]`` are ignored."""
    n = len(diag)
    cp = [0.0] * n
    dp = [0.0] * n
    b = float(diag[0])
    if b == 0.0:
        raise SingularSystemError()
    cp[0] = float(sup[0]) / b if n > 1 else 0.0
    dp[0] = float(rhs[0]) / b
    for i in range(1, n):
        a = float(sub[i])
        den = float(diag[i]) - a * cp[i - 1]
        if den == 0.0:
            raise SingularSystemError()
        cp[i] = float(sup[i]) / den if i < n - 1 else 0.0
        dp[i] = (float(rhs[i]) - a * dp[i - 1]) / den
    x = np.empty(n)
    x[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        dp[i] = dp[i] - cp[i] * dp[i + 1]
        x[i] = dp[i]
    return x


def thomas_batch(sub, diag, sup, rhs):
    """Solve ``m`` independent systems stored row-wise in ``(m, n)`` arrays."""
    m, n = diag.shape
    cp = np.zeros((m, n))
    dp = np.zeros((m, n))
    b = diag[:, 0]
    if np.any(b == 0.0):
        raise SingularSystemError()
    if n > 1:
        cp[:, 0] = sup[:, 0] / b
    dp[:, 0] = rhs[:, 0] / b
    for i in range(1, n):
        a = sub[:, i]
        den = diag[:, i] - a * cp[:, i - 1]
        if np.any(den == 0.0):
            raise SingularSystemError()
        if i < n - 1:
            cp[:, i] = sup[:, i] / den
        dp[:, i] = (rhs[:, i] - a * dp[:, i - 1]) / den
    x = np.empty((m, n))
    x[:, n - 1] = dp[:, n - 1]
    for i in range(n - 2, -1, -1):
        x[:, i] = dp[:, i] - cp[:, i] * x[:, i + 1]
    return x
