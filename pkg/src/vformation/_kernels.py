"""Compiled loop version of the batched cost, used on the optimiser hot path.

Mirrors ``flock._cv_terms``, ``flock._vm`` and ``flock._ub_terms`` term by
term; the numpy versions stay the reference implementation.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

OK = 0
ZERO_SPEED = 1
COINCIDENT = 2


@njit(cache=True)
def _union_length(starts, ends, n, lo):
    # insertion sort by start, then sweep
    for a in range(1, n):
        s, e = starts[a], ends[a]
        b = a - 1
        while b >= 0 and starts[b] > s:
            starts[b + 1] = starts[b]
            ends[b + 1] = ends[b]
            b -= 1
        starts[b + 1] = s
        ends[b + 1] = e
    total = 0.0
    reach = lo
    for a in range(n):
        s = starts[a] if starts[a] > reach else reach
        if ends[a] > s:
            total += ends[a] - s
        if ends[a] > reach:
            reach = ends[a]
    return total


@njit(cache=True)
def batch_cost(x, v, view_angle, wing_span, threshold, mu0, mu1, p00, p01, p11, alpha):
    """Cost of each configuration in ``x``, ``v`` of shape ``(N, B, 2)``.

    Returns ``(costs, status)``; a non-zero status flags a zero speed or two
    coincident birds, in which case the costs are meaningless.
    """
    N, B = x.shape[0], x.shape[1]
    out = np.empty(N)
    c = 0.5 * view_angle
    sq8 = 2.0 * math.sqrt(2.0)
    speed = np.empty(B)
    ux = np.empty(B)
    uy = np.empty(B)
    starts = np.empty(2 * B)
    ends = np.empty(2 * B)
    for k in range(N):
        for i in range(B):
            s = math.sqrt(v[k, i, 0] ** 2 + v[k, i, 1] ** 2)
            if s == 0.0:
                return out, ZERO_SPEED
            speed[i] = s
            ux[i] = v[k, i, 0] / s
            uy[i] = v[k, i, 1] / s
        cv = 0.0
        vm = 0.0
        ub = 0.0
        for i in range(B):
            n_int = 0
            up = 0.0
            for j in range(B):
                if j == i:
                    continue
                rx = x[k, j, 0] - x[k, i, 0]
                ry = x[k, j, 1] - x[k, i, 1]
                if rx * rx + ry * ry == 0.0:
                    return out, COINCIDENT
                # clear view: wing of j as seen from i
                hx = 0.5 * wing_span * -uy[j]
                hy = 0.5 * wing_span * ux[j]
                e1x, e1y = rx + hx, ry + hy
                e2x, e2y = rx - hx, ry - hy
                f1 = ux[i] * e1x + uy[i] * e1y
                f2 = ux[i] * e2x + uy[i] * e2y
                if f1 <= 0.0 and f2 <= 0.0 and c < 0.5 * math.pi:
                    # wing entirely behind: cannot enter a forward cone
                    pass
                else:
                    n_int = _add_interval(ux[i], uy[i], e1x, e1y, e2x, e2y, c, starts, ends, n_int)
                # upwash received by i from j
                g = ux[i] * rx + uy[i] * ry
                if g > 0.0:
                    ah = abs(ux[i] * ry - uy[i] * rx)
                    z0 = ah - mu0
                    z1 = abs(g) - mu1
                    q = p00 * z0 * z0 + p01 * z0 * z1 + p11 * z1 * z1
                    val = math.erf(sq8 * (ah - threshold)) * math.exp(-0.5 * q)
                    if ah >= threshold:
                        val *= alpha
                    up += val
            cv += _union_length(starts, ends, n_int, -c) / view_angle
            ub += 1.0 - min(up, 1.0)
            for j in range(i + 1, B):
                dx = v[k, i, 0] - v[k, j, 0]
                dy = v[k, i, 1] - v[k, j, 1]
                r = math.sqrt(dx * dx + dy * dy) / (speed[i] + speed[j])
                vm += r * r
        out[k] = cv * cv + vm * vm + (ub - 1.0) ** 2
    return out, OK


@njit(cache=True)
def _add_interval(uxi, uyi, e1x, e1y, e2x, e2y, c, starts, ends, n):
    a1 = math.atan2(uxi * e1y - uyi * e1x, uxi * e1x + uyi * e1y)
    a2 = math.atan2(uxi * e2y - uyi * e2x, uxi * e2x + uyi * e2y)
    lo = min(a1, a2)
    hi = max(a1, a2)
    if hi - lo > math.pi:
        starts[n] = max(hi, -c)
        ends[n] = max(c, starts[n])
        starts[n + 1] = -c
        ends[n + 1] = max(min(lo, c), -c)
        return n + 2
    starts[n] = max(lo, -c)
    ends[n] = max(min(hi, c), starts[n])
    return n + 1


def params_tuple(params) -> tuple:
    P = params.upwash_precision
    return (
        float(params.view_angle), float(params.wing_span), float(params.upwash_threshold),
        float(params.upwash_mean[0]), float(params.upwash_mean[1]),
        float(P[0, 0]), float(P[0, 1] + P[1, 0]), float(P[1, 1]), float(params.upwash_scale),
    )
