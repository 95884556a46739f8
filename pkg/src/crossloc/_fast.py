"""Compiled kernels for the per-step hot paths.

Same closed forms and series thresholds as the numpy code in :mod:`se3`;
``tests/test_fast.py`` checks the two against each other. Rows whose
rotation angle reaches the principal-branch cutoff come back as NaN and the
callers decide whether that is an error.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

SERIES_ANGLE = 1e-2
PI_CUTOFF = math.pi - 1e-6


@njit(cache=True)
def _log_into(R, t, out):
    """Twist of a single pose ``(R, t)`` written into ``out[:6]``."""
    w0 = 0.5 * (R[2, 1] - R[1, 2])
    w1 = 0.5 * (R[0, 2] - R[2, 0])
    w2 = 0.5 * (R[1, 0] - R[0, 1])
    c = 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)
    sn = math.sqrt(w0 * w0 + w1 * w1 + w2 * w2)
    th = math.atan2(sn, c)
    if th >= PI_CUTOFF:
        for i in range(6):
            out[i] = np.nan
        return
    t2 = th * th
    if th < SERIES_ANGLE:
        f = 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0
        D = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        f = th / sn
        A = math.sin(th) / th
        h = math.sin(0.5 * th)
        B = 2.0 * h * h / t2
        D = (1.0 - A / (2.0 * B)) / t2
    p0, p1, p2 = w0 * f, w1 * f, w2 * f
    x, y, z = t[0], t[1], t[2]
    pt = p0 * x + p1 * y + p2 * z
    # V^-1 t = t - 1/2 phi x t + D (phi (phi.t) - |phi|^2 t)
    out[0] = x - 0.5 * (p1 * z - p2 * y) + D * (p0 * pt - t2 * x)
    out[1] = y - 0.5 * (p2 * x - p0 * z) + D * (p1 * pt - t2 * y)
    out[2] = z - 0.5 * (p0 * y - p1 * x) + D * (p2 * pt - t2 * z)
    out[3] = p0
    out[4] = p1
    out[5] = p2


@njit(cache=True)
def rel_log(Ra, ta, Rb, tb):
    """``log(a_k^-1 b_k)`` for equal-length stacks, ``(N, 6)``."""
    n = Rb.shape[0]
    out = np.empty((n, 6))
    R = np.empty((3, 3))
    d = np.empty(3)
    for k in range(n):
        for i in range(3):
            s = 0.0
            for m in range(3):
                s += Ra[k, m, i] * (tb[k, m] - ta[k, m])
            d[i] = s
            for j in range(3):
                s = 0.0
                for m in range(3):
                    s += Ra[k, m, i] * Rb[k, m, j]
                R[i, j] = s
        _log_into(R, d, out[k])
    return out


@njit(cache=True)
def pair_logs(Rs, ts):
    """``log(p_a^-1 p_b)`` for all ordered pairs, ``(N, N, 6)``."""
    n = Rs.shape[0]
    out = np.empty((n, n, 6))
    R = np.empty((3, 3))
    d = np.empty(3)
    for a in range(n):
        for b in range(n):
            for i in range(3):
                s = 0.0
                for m in range(3):
                    s += Rs[a, m, i] * (ts[b, m] - ts[a, m])
                d[i] = s
                for j in range(3):
                    s = 0.0
                    for m in range(3):
                        s += Rs[a, m, i] * Rs[b, m, j]
                    R[i, j] = s
            _log_into(R, d, out[a, b])
    return out


@njit(cache=True)
def right_exp(Rm, tm, xi):
    """``(Rm_k, tm_k) exp(xi_k)`` for stacks."""
    n = xi.shape[0]
    Ro = np.empty((n, 3, 3))
    to = np.empty((n, 3))
    E = np.empty((3, 3))
    v = np.empty(3)
    for k in range(n):
        r0, r1, r2 = xi[k, 0], xi[k, 1], xi[k, 2]
        p0, p1, p2 = xi[k, 3], xi[k, 4], xi[k, 5]
        t2 = p0 * p0 + p1 * p1 + p2 * p2
        th = math.sqrt(t2)
        if th < SERIES_ANGLE:
            A = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
            B = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
            C = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        else:
            s = math.sin(th)
            h = math.sin(0.5 * th)
            A = s / th
            B = 2.0 * h * h / t2
            C = (th - s) / (th * t2)
        # R = (1 - B th^2) I + A [phi]x + B phi phi^T
        c0 = 1.0 - B * t2
        E[0, 0] = c0 + B * p0 * p0
        E[1, 1] = c0 + B * p1 * p1
        E[2, 2] = c0 + B * p2 * p2
        E[0, 1] = -A * p2 + B * p0 * p1
        E[1, 0] = A * p2 + B * p0 * p1
        E[0, 2] = A * p1 + B * p0 * p2
        E[2, 0] = -A * p1 + B * p0 * p2
        E[1, 2] = -A * p0 + B * p1 * p2
        E[2, 1] = A * p0 + B * p1 * p2
        pr = p0 * r0 + p1 * r1 + p2 * r2
        v[0] = r0 + B * (p1 * r2 - p2 * r1) + C * (p0 * pr - t2 * r0)
        v[1] = r1 + B * (p2 * r0 - p0 * r2) + C * (p1 * pr - t2 * r1)
        v[2] = r2 + B * (p0 * r1 - p1 * r0) + C * (p2 * pr - t2 * r2)
        for i in range(3):
            s = 0.0
            for m in range(3):
                s += Rm[k, i, m] * v[m]
            to[k, i] = s + tm[k, i]
            for j in range(3):
                s = 0.0
                for m in range(3):
                    s += Rm[k, i, m] * E[m, j]
                Ro[k, i, j] = s
    return Ro, to


@njit(cache=True)
def transport(covs, R, t):
    """``Ad_{T^-1} cov Ad_{T^-1}^T`` (symmetrised) for stacks."""
    n = covs.shape[0]
    out = np.empty((n, 6, 6))
    Ad = np.zeros((6, 6))
    tmp = np.empty((6, 6))
    for k in range(n):
        # T^-1 = (R^T, -R^T t); Ad = [[Ri, [ti]x Ri], [0, Ri]]
        Ri = R[k].T
        ti0 = -(Ri[0, 0] * t[k, 0] + Ri[0, 1] * t[k, 1] + Ri[0, 2] * t[k, 2])
        ti1 = -(Ri[1, 0] * t[k, 0] + Ri[1, 1] * t[k, 1] + Ri[1, 2] * t[k, 2])
        ti2 = -(Ri[2, 0] * t[k, 0] + Ri[2, 1] * t[k, 1] + Ri[2, 2] * t[k, 2])
        for i in range(3):
            for j in range(3):
                Ad[i, j] = Ri[i, j]
                Ad[i + 3, j + 3] = Ri[i, j]
            # row i of [ti]x times Ri
        for j in range(3):
            Ad[0, j + 3] = -ti2 * Ri[1, j] + ti1 * Ri[2, j]
            Ad[1, j + 3] = ti2 * Ri[0, j] - ti0 * Ri[2, j]
            Ad[2, j + 3] = -ti1 * Ri[0, j] + ti0 * Ri[1, j]
        for i in range(6):
            for j in range(6):
                s = 0.0
                for m in range(6):
                    s += Ad[i, m] * covs[k, m, j]
                tmp[i, j] = s
        for i in range(6):
            for j in range(i, 6):
                s = 0.0
                for m in range(6):
                    s += tmp[i, m] * Ad[j, m]
                out[k, i, j] = s
        for i in range(6):
            for j in range(i):
                out[k, i, j] = out[k, j, i]
    return out
