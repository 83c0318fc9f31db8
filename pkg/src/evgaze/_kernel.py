"""Compiled per-event update loop.

Sub-model index ``m``: 0 pupil ellipse (k=5), 1 eyelid parabola (k=3),
2 glint circle (k=3). State arrays are stacked to the largest k and each
sub-model uses its leading k x k block. Fitting runs in coordinates divided
by ``scale``; ``params`` hold pixel-unit parameters used for gating:
ellipse ``(a, h, b, g, f)``, parabola ``(a, g, d)`` in (row, col) form,
circle ``(cx, cy, r)``.
"""
from __future__ import annotations

import math

import numba
import numpy as np

PUPIL, EYELID, GLINT = 0, 1, 2
KDIM = np.array([5, 3, 3], dtype=np.int64)
REJECTED = -1
PIVOT_TOL = 1e-14


@numba.njit(cache=True)
def invert(A, k, out):
    """Gauss-Jordan inverse of the leading k x k block with partial pivoting; False if singular."""
    M = np.empty((k, 2 * k))
    scale = 0.0
    for i in range(k):
        for j in range(k):
            M[i, j] = A[i, j]
            M[i, k + j] = 1.0 if i == j else 0.0
            if abs(A[i, j]) > scale:
                scale = abs(A[i, j])
    if not scale > 0.0:
        return False
    for c in range(k):
        p = c
        best = abs(M[c, c])
        for r in range(c + 1, k):
            if abs(M[r, c]) > best:
                best = abs(M[r, c])
                p = r
        if best <= PIVOT_TOL * scale:
            return False
        if p != c:
            for j in range(2 * k):
                tmp = M[c, j]
                M[c, j] = M[p, j]
                M[p, j] = tmp
        piv = M[c, c]
        for j in range(2 * k):
            M[c, j] /= piv
        for r in range(k):
            if r != c:
                fac = M[r, c]
                if fac != 0.0:
                    for j in range(2 * k):
                        M[r, j] -= fac * M[c, j]
    for i in range(k):
        for j in range(k):
            v = M[i, k + j]
            if not math.isfinite(v):
                return False
            out[i, j] = v
    return True


@numba.njit(cache=True)
def feature(m, x, y, v):
    """Fill feature vector ``v`` for normalized point (x, y); returns the target."""
    if m == PUPIL:
        v[0] = x * x
        v[1] = x * y
        v[2] = y * y
        v[3] = x
        v[4] = y
        return 1.0
    if m == EYELID:
        # (row, col) = (y, x); row is the dependent coordinate
        v[0] = x * x
        v[1] = x
        v[2] = 1.0
        return y
    v[0] = x
    v[1] = y
    v[2] = 1.0
    return -(x * x + y * y)


@numba.njit(cache=True)
def ellipse_cache(p, out):
    """Center and centered constant of pixel ellipse ``p``; False if not a real ellipse."""
    a, h, b, g, f = p[0], p[1], p[2], p[3], p[4]
    disc = h * h - 4.0 * a * b
    quad = a * a + 0.5 * h * h + b * b
    if not math.isfinite(disc) or quad == 0.0 or abs(disc) <= 1e-12 * quad or disc >= 0.0:
        return False
    xc = (2.0 * b * g - h * f) / disc
    yc = (2.0 * a * f - h * g) / disc
    K = 1.0 - 0.5 * (g * xc + f * yc)
    if not (math.isfinite(K) and K * a > 0.0):
        return False
    out[0] = xc
    out[1] = yc
    out[2] = K
    return True


@numba.njit(cache=True)
def usable_ellipse(p, width, height, cache):
    if not ellipse_cache(p, cache):
        return False
    a, h, b = p[0], p[1], p[2]
    xc, yc, K = cache[0], cache[1], cache[2]
    mean = 0.5 * (a + b)
    spread = math.hypot(0.5 * (a - b), 0.5 * h)
    l1, l2 = mean - spread, mean + spread
    if l1 * l2 <= 0.0 or K * l1 <= 0.0:
        return False
    r1, r2 = math.sqrt(K / l1), math.sqrt(K / l2)
    major, minor = max(r1, r2), min(r1, r2)
    size = max(width, height)
    return (-width <= xc <= 2 * width and -height <= yc <= 2 * height
            and minor >= 0.5 and major <= 2 * size and math.isfinite(major))


@numba.njit(cache=True)
def gate(x, y, params, valid, cache, delta):
    if valid[PUPIL]:
        ux, uy = x - cache[0], y - cache[1]
        if ux != 0.0 or uy != 0.0:
            p = params[PUPIL]
            q = p[0] * ux * ux + p[1] * ux * uy + p[2] * uy * uy
            if q != 0.0 and cache[2] / q > 0.0:
                s = math.sqrt(cache[2] / q)
                if abs(s - 1.0) * math.hypot(ux, uy) < delta:
                    return PUPIL
    if valid[GLINT]:
        c = params[GLINT]
        e = (x - c[0]) ** 2 + (y - c[1]) ** 2 - c[2] * c[2]
        if e * e < delta * delta:
            return GLINT
    if valid[EYELID]:
        c = params[EYELID]
        if abs(c[0] * x * x + c[1] * x + c[2] - y) < delta:
            return EYELID
    return REJECTED


@numba.njit(cache=True)
def solve_and_store(m, A, b, Ainv, count, params, valid, cache, scale, width, height):
    """Solve sub-model m from its fresh inverse; store pixel params if usable."""
    k = KDIM[m]
    if count[m] < k:
        return False
    sol = np.zeros(5)
    for i in range(k):
        acc = 0.0
        for j in range(k):
            acc += Ainv[m, i, j] * b[m, j]
        if not math.isfinite(acc):
            return False
        sol[i] = acc
    cand = np.zeros(5)
    if m == PUPIL:
        s2 = scale * scale
        cand[0] = sol[0] / s2
        cand[1] = sol[1] / s2
        cand[2] = sol[2] / s2
        cand[3] = sol[3] / scale
        cand[4] = sol[4] / scale
        tmp = np.empty(3)
        if not usable_ellipse(cand, width, height, tmp):
            return False
        cache[0] = tmp[0]
        cache[1] = tmp[1]
        cache[2] = tmp[2]
    elif m == EYELID:
        cand[0] = sol[0] / scale
        cand[1] = sol[1]
        cand[2] = sol[2] * scale
    else:
        cx, cy = -0.5 * sol[0] * scale, -0.5 * sol[1] * scale
        r2 = cx * cx + cy * cy - sol[2] * scale * scale
        if not r2 > 0.0:
            return False
        cand[0] = cx
        cand[1] = cy
        cand[2] = math.sqrt(r2)
    for i in range(5):
        params[m, i] = cand[i]
    valid[m] = True
    return True


@numba.njit(cache=True)
def apply_pending(m, A, b, Ainv, fresh, count, smw, pend, pend_n, gamma_prime, refresh_period, scale):
    """Blend the pending batch of sub-model m into its state; returns False if the inverse failed."""
    k = KDIM[m]
    n = pend_n[m]
    v = np.zeros(5)
    if n == 1:
        if not fresh[m] or smw[m] >= refresh_period:
            if not invert(A[m], k, Ainv[m]):
                fresh[m] = False
                return False
            fresh[m] = True
            smw[m] = 0
        target = feature(m, pend[m, 0, 0] / scale, pend[m, 0, 1] / scale, v)
        w = 1.0 - gamma_prime
        Av = np.zeros(5)
        vAv = 0.0
        for i in range(k):
            acc = 0.0
            for j in range(k):
                acc += Ainv[m, i, j] * v[j]
            Av[i] = acc
            vAv += v[i] * acc
        denom = gamma_prime + w * vAv
        if not abs(denom) > 1e-12:
            fresh[m] = False
            return False
        for i in range(k):
            for j in range(k):
                A[m, i, j] = gamma_prime * A[m, i, j] + w * v[i] * v[j]
                Ainv[m, i, j] = Ainv[m, i, j] / gamma_prime - (w / gamma_prime) * Av[i] * Av[j] / denom
            b[m, i] = gamma_prime * b[m, i] + w * target * v[i]
        # the antisymmetric part of the rounding error grows by 1/gamma' per update
        for i in range(k):
            for j in range(i + 1, k):
                s = 0.5 * (Ainv[m, i, j] + Ainv[m, j, i])
                Ainv[m, i, j] = s
                Ainv[m, j, i] = s
        smw[m] += 1
        count[m] += 1
        return True
    Ab = np.zeros((5, 5))
    bb = np.zeros(5)
    for e in range(n):
        target = feature(m, pend[m, e, 0] / scale, pend[m, e, 1] / scale, v)
        for i in range(k):
            for j in range(k):
                Ab[i, j] += v[i] * v[j]
            bb[i] += target * v[i]
    for i in range(k):
        for j in range(k):
            A[m, i, j] = gamma_prime * A[m, i, j] + (1.0 - gamma_prime) * Ab[i, j]
        b[m, i] = gamma_prime * b[m, i] + (1.0 - gamma_prime) * bb[i]
    count[m] += n
    ok = invert(A[m], k, Ainv[m])
    fresh[m] = ok
    smw[m] = 0
    return ok


@numba.njit(cache=True)
def process_events(ev_t, ev_x, ev_y, start, stop,
                   A, b, Ainv, fresh, count, smw, params, valid, cache, pend, pend_n,
                   n_per_fit, gamma_prime, delta, refresh_period, scale, width, height,
                   out_t, out_mask, out_params, out_valid, gated):
    """Consume events [start, stop); returns the number of emissions written.

    ``gated`` (3,) is incremented per admitted event. Each emission records
    the full pixel model after the update that triggered it.
    """
    n_out = 0
    for i in range(start, stop):
        x = float(ev_x[i])
        y = float(ev_y[i])
        m = gate(x, y, params, valid, cache, delta)
        if m == REJECTED:
            continue
        gated[m] += 1
        pend[m, pend_n[m], 0] = x
        pend[m, pend_n[m], 1] = y
        pend_n[m] += 1
        if pend_n[m] < n_per_fit:
            continue
        ok = apply_pending(m, A, b, Ainv, fresh, count, smw, pend, pend_n, gamma_prime, refresh_period, scale)
        pend_n[m] = 0
        if not ok:
            continue
        if not solve_and_store(m, A, b, Ainv, count, params, valid, cache, scale, width, height):
            continue
        out_t[n_out] = ev_t[i]
        out_mask[n_out] = 1 << m
        for r in range(3):
            for c in range(5):
                out_params[n_out, r, c] = params[r, c]
            out_valid[n_out, r] = valid[r]
        n_out += 1
    return n_out
