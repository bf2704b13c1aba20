"""Fused compiled kernels for the triple-jump step on the built-in potentials.

The numpy path in :mod:`flow` is the reference; these loops compute the same
expressions row by row and are used when the potential exposes a
``kernel_spec()``.
"""

from __future__ import annotations

import math

import numba
import numpy as np

HARMONIC, BARRIER, ATAN = 0, 1, 2


@numba.njit(cache=True, inline="always")
def _d1(kind, p, x):
    if kind == HARMONIC:
        return 2.0 * (x - p[0]) / p[1]
    if kind == BARRIER:
        # p = (height, left, right, k, 3 height k) with k = pi / (right - left)
        if x < p[1] or x > p[2]:
            return 0.0
        th = p[3] * (x - p[1])
        s = math.sin(th)
        return p[4] * s * s * math.cos(th)
    z = 2.0 * x + math.pi / 2
    return 2.0 * p[0] / (1.0 + z * z)


@numba.njit(cache=True)
def step_kernel(kind, p, sign, x1, x2, xi1, xi2, h, g0, tol, gammas):
    """Triple-jump step of every row; returns the new state and ``g`` after the step.

    ``g0`` is filled with ``g`` before the step.  ``bad`` counts rows that
    hit ``xi = 0`` where ``V' = 0``.
    """
    n = x1.shape[0]
    o1 = np.empty(n)
    o2 = np.empty(n)
    o3 = np.empty(n)
    o4 = np.empty(n)
    g1 = np.empty(n)
    bad = 0
    for i in range(n):
        a, b, c, d = x1[i], x2[i], xi1[i], xi2[i]
        s = sign[i]
        dv = _d1(kind, p, a)
        g0[i] = c * dv
        for j in range(3):
            hc = gammas[j] * h[i]
            c = c - (0.5 * hc) * dv
            r = math.sqrt(c * c + d * d)
            if r <= tol:
                if dv == 0.0:
                    bad += 1
                elif dv > 0.0:
                    a = a - s * hc
                else:
                    a = a + s * hc
            else:
                f = (s * hc) / r
                a = a + f * c
                b = b + f * d
            dv = _d1(kind, p, a)
            c = c - (0.5 * hc) * dv
        o1[i], o2[i], o3[i], o4[i] = a, b, c, d
        g1[i] = c * dv
    return o1, o2, o3, o4, g1, bad

