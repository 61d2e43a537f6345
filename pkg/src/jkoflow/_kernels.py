"""Compiled inner loops for transforms, deposits and 1-D transport cost.

Everything here is deliberately single-threaded so that results are
bit-identical regardless of how the caller schedules work.
"""

import numpy as np
from numba import njit

BIG = 1e300


@njit(cache=True)
def envelope_rows(vals, a, out, arg):
    """Row-wise lower envelope of parabolas.

    out[r, i] = min_j vals[r, j] + a*(i-j)**2, arg[r, i] = minimizing j
    (ties resolved to the lowest j by construction order).
    """
    rows, n = vals.shape
    v = np.empty(n, np.int64)
    z = np.empty(n + 1, np.float64)
    for r in range(rows):
        f = vals[r]
        k = 0
        v[0] = 0
        z[0] = -BIG
        z[1] = BIG
        for q in range(1, n):
            fq = f[q] + a * q * q
            while True:
                p = v[k]
                s = (fq - (f[p] + a * p * p)) / (2.0 * a * (q - p))
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = BIG
        k = 0
        for i in range(n):
            while z[k + 1] < i:
                k += 1
            j = v[k]
            out[r, i] = a * (i - j) * (i - j) + f[j]
            arg[r, i] = j


@njit(cache=True)
def pl_transform_1d(p, xs, tau, h, out_val, out_pos):
    """Continuous quadratic-cost c-transform of the linear interpolant of p.

    out_val[i] = min over x in [xs[0], xs[-1]] of  P(x) + (x - xs[i])^2/(2 tau)
    with P the piecewise-linear interpolant; out_pos[i] is the minimizer.
    Exact: per-segment minima have closed form, the scan window is limited
    by the bound P >= min(p).
    """
    n = p.size
    pmin = p[0]
    for j in range(1, n):
        if p[j] < pmin:
            pmin = p[j]
    for i in range(n):
        y = xs[i]
        best = p[i]
        bx = y
        r = np.sqrt(max(2.0 * tau * (best - pmin), 0.0)) + h
        jlo = int(np.floor((y - r) / h - 0.5)) - 1
        jhi = int(np.ceil((y + r) / h - 0.5)) + 1
        if jlo < 0:
            jlo = 0
        if jhi > n - 1:
            jhi = n - 1
        for j in range(jlo, jhi + 1):
            d = xs[j] - y
            v = p[j] + d * d / (2.0 * tau)
            if v < best:
                best = v
                bx = xs[j]
        for j in range(jlo, jhi):
            s = (p[j + 1] - p[j]) / h
            xhat = y - tau * s
            if xhat > xs[j] and xhat < xs[j + 1]:
                d = xhat - y
                v = p[j] + s * (xhat - xs[j]) + d * d / (2.0 * tau)
                if v < best:
                    best = v
                    bx = xhat
        out_val[i] = best
        out_pos[i] = bx


@njit(cache=True)
def pl_waterfill_1d(p, xs, tau, h, pcv, rb, kappa, dep, sval, cshare):
    """Smoothed pushforward for the linear-interpolant transform.

    For each source node i the unit of mass rb[i] is split over the
    candidate minimizers of P(x) + c(x, xs[i]) whose slack against pcv[i]
    is below the active water level; weights solve
    min_w sum w*slack + kappa/2 sum w^2 over the simplex.  dep receives the
    hat-function deposit (density units), sval the smoothed transform value
    and cshare the weighted transport-cost share of node i.
    """
    n = p.size
    pmin = p[0]
    for j in range(1, n):
        if p[j] < pmin:
            pmin = p[j]
    dep[:] = 0.0
    cand_x = np.empty(2 * n, np.float64)
    cand_v = np.empty(2 * n, np.float64)
    for i in range(n):
        y = xs[i]
        base = pcv[i]
        r = np.sqrt(max(2.0 * tau * (base + kappa - pmin), 0.0)) + h
        jlo = int(np.floor((y - r) / h - 0.5)) - 1
        jhi = int(np.ceil((y + r) / h - 0.5)) + 1
        if jlo < 0:
            jlo = 0
        if jhi > n - 1:
            jhi = n - 1
        m = 0
        for j in range(jlo, jhi + 1):
            d = xs[j] - y
            v = p[j] + d * d / (2.0 * tau)
            if v - base < kappa:
                cand_x[m] = xs[j]
                cand_v[m] = v
                m += 1
        for j in range(jlo, jhi):
            s = (p[j + 1] - p[j]) / h
            xhat = y - tau * s
            if xhat > xs[j] and xhat < xs[j + 1]:
                d = xhat - y
                v = p[j] + s * (xhat - xs[j]) + d * d / (2.0 * tau)
                if v - base < kappa:
                    cand_x[m] = xhat
                    cand_v[m] = v
                    m += 1
        for u in range(1, m):
            kv = cand_v[u]
            kx = cand_x[u]
            q = u - 1
            while q >= 0 and cand_v[q] > kv:
                cand_v[q + 1] = cand_v[q]
                cand_x[q + 1] = cand_x[q]
                q -= 1
            cand_v[q + 1] = kv
            cand_x[q + 1] = kx
        ssum = 0.0
        act = 0
        lam = 0.0
        for u in range(m):
            sl = cand_v[u] - base
            st = ssum + sl
            lt = (kappa + st) / (u + 1)
            if lt > sl:
                ssum = st
                act = u + 1
                lam = lt
            else:
                break
        w2 = 0.0
        val = 0.0
        csh = 0.0
        for u in range(act):
            sl = cand_v[u] - base
            w = (lam - sl) / kappa
            xstar = cand_x[u]
            g = xstar / h - 0.5
            if g < 0.0:
                g = 0.0
            if g > n - 1.0:
                g = n - 1.0
            j0 = int(g)
            if j0 > n - 2:
                j0 = n - 2
            wf = g - j0
            dep[j0] += rb[i] * w * (1.0 - wf)
            dep[j0 + 1] += rb[i] * w * wf
            d = xstar - y
            csh += w * d * d / (2.0 * tau)
            val += w * cand_v[u]
            w2 += w * w
        sval[i] = val + 0.5 * kappa * w2
        cshare[i] = csh


@njit(cache=True)
def nodal_waterfill_1d(p, xs, tau, h, pcv, rb, kappa, dep, sval, cshare):
    """Smoothed pushforward over grid-node candidates (quadratic cost)."""
    n = p.size
    pmin = p[0]
    for j in range(1, n):
        if p[j] < pmin:
            pmin = p[j]
    dep[:] = 0.0
    cand_j = np.empty(n, np.int64)
    cand_v = np.empty(n, np.float64)
    for i in range(n):
        y = xs[i]
        base = pcv[i]
        r = np.sqrt(max(2.0 * tau * (base + kappa - pmin), 0.0)) + h
        jlo = int(np.floor((y - r) / h - 0.5)) - 1
        jhi = int(np.ceil((y + r) / h - 0.5)) + 1
        if jlo < 0:
            jlo = 0
        if jhi > n - 1:
            jhi = n - 1
        m = 0
        for j in range(jlo, jhi + 1):
            d = xs[j] - y
            v = p[j] + d * d / (2.0 * tau)
            if v - base < kappa:
                cand_j[m] = j
                cand_v[m] = v
                m += 1
        for u in range(1, m):
            kv = cand_v[u]
            kj = cand_j[u]
            q = u - 1
            while q >= 0 and cand_v[q] > kv:
                cand_v[q + 1] = cand_v[q]
                cand_j[q + 1] = cand_j[q]
                q -= 1
            cand_v[q + 1] = kv
            cand_j[q + 1] = kj
        ssum = 0.0
        act = 0
        lam = 0.0
        for u in range(m):
            sl = cand_v[u] - base
            st = ssum + sl
            lt = (kappa + st) / (u + 1)
            if lt > sl:
                ssum = st
                act = u + 1
                lam = lt
            else:
                break
        w2 = 0.0
        val = 0.0
        csh = 0.0
        for u in range(act):
            sl = cand_v[u] - base
            w = (lam - sl) / kappa
            j = cand_j[u]
            dep[j] += rb[i] * w
            d = xs[j] - y
            csh += w * d * d / (2.0 * tau)
            val += w * cand_v[u]
            w2 += w * w
        sval[i] = val + 0.5 * kappa * w2
        cshare[i] = csh


@njit(cache=True)
def nodal_waterfill_2d(p, h1, h2, tau, pcv, rb, kappa, dep, sval, cshare):
    """2-D analogue of nodal_waterfill_1d; arrays are (n1, n2)."""
    n1, n2 = p.shape
    pmin = p[0, 0]
    for i1 in range(n1):
        for i2 in range(n2):
            if p[i1, i2] < pmin:
                pmin = p[i1, i2]
    dep[:, :] = 0.0
    maxc = n1 * n2
    cj1 = np.empty(maxc, np.int64)
    cj2 = np.empty(maxc, np.int64)
    cv = np.empty(maxc, np.float64)
    for i1 in range(n1):
        for i2 in range(n2):
            base = pcv[i1, i2]
            lim = 2.0 * tau * (base + kappa - pmin)
            if lim < 0.0:
                lim = 0.0
            r1 = np.sqrt(lim) / h1 + 1.0
            jlo1 = i1 - int(r1) - 1
            jhi1 = i1 + int(r1) + 1
            if jlo1 < 0:
                jlo1 = 0
            if jhi1 > n1 - 1:
                jhi1 = n1 - 1
            m = 0
            for j1 in range(jlo1, jhi1 + 1):
                d1 = (j1 - i1) * h1
                rem = lim - d1 * d1
                if rem < 0.0:
                    continue
                r2 = np.sqrt(rem) / h2 + 1.0
                jlo2 = i2 - int(r2) - 1
                jhi2 = i2 + int(r2) + 1
                if jlo2 < 0:
                    jlo2 = 0
                if jhi2 > n2 - 1:
                    jhi2 = n2 - 1
                for j2 in range(jlo2, jhi2 + 1):
                    d2 = (j2 - i2) * h2
                    v = p[j1, j2] + (d1 * d1 + d2 * d2) / (2.0 * tau)
                    if v - base < kappa:
                        cj1[m] = j1
                        cj2[m] = j2
                        cv[m] = v
                        m += 1
            for u in range(1, m):
                kv = cv[u]
                k1 = cj1[u]
                k2 = cj2[u]
                q = u - 1
                while q >= 0 and cv[q] > kv:
                    cv[q + 1] = cv[q]
                    cj1[q + 1] = cj1[q]
                    cj2[q + 1] = cj2[q]
                    q -= 1
                cv[q + 1] = kv
                cj1[q + 1] = k1
                cj2[q + 1] = k2
            ssum = 0.0
            act = 0
            lam = 0.0
            for u in range(m):
                sl = cv[u] - base
                st = ssum + sl
                lt = (kappa + st) / (u + 1)
                if lt > sl:
                    ssum = st
                    act = u + 1
                    lam = lt
                else:
                    break
            w2 = 0.0
            val = 0.0
            csh = 0.0
            for u in range(act):
                sl = cv[u] - base
                w = (lam - sl) / kappa
                j1 = cj1[u]
                j2 = cj2[u]
                dep[j1, j2] += rb[i1, i2] * w
                d1 = (j1 - i1) * h1
                d2 = (j2 - i2) * h2
                csh += w * (d1 * d1 + d2 * d2) / (2.0 * tau)
                val += w * cv[u]
                w2 += w * w
            sval[i1, i2] = val + 0.5 * kappa * w2
            cshare[i1, i2] = csh


@njit(cache=True)
def matrix_waterfill(p, cmat, pcv, rb, kappa, dep, sval, cshare):
    """Smoothed pushforward for an arbitrary dense cost matrix (1-D)."""
    n = p.size
    dep[:] = 0.0
    cand_j = np.empty(n, np.int64)
    cand_v = np.empty(n, np.float64)
    for i in range(n):
        base = pcv[i]
        m = 0
        for j in range(n):
            v = p[j] + cmat[j, i]
            if v - base < kappa:
                cand_j[m] = j
                cand_v[m] = v
                m += 1
        for u in range(1, m):
            kv = cand_v[u]
            kj = cand_j[u]
            q = u - 1
            while q >= 0 and cand_v[q] > kv:
                cand_v[q + 1] = cand_v[q]
                cand_j[q + 1] = cand_j[q]
                q -= 1
            cand_v[q + 1] = kv
            cand_j[q + 1] = kj
        ssum = 0.0
        act = 0
        lam = 0.0
        for u in range(m):
            sl = cand_v[u] - base
            st = ssum + sl
            lt = (kappa + st) / (u + 1)
            if lt > sl:
                ssum = st
                act = u + 1
                lam = lt
            else:
                break
        w2 = 0.0
        val = 0.0
        csh = 0.0
        for u in range(act):
            sl = cand_v[u] - base
            w = (lam - sl) / kappa
            j = cand_j[u]
            dep[j] += rb[i] * w
            csh += w * cmat[j, i]
            val += w * cand_v[u]
            w2 += w * w
        sval[i] = val + 0.5 * kappa * w2
        cshare[i] = csh


@njit(cache=True)
def monotone_transport_cost_1d(a, b, xs, invtau):
    """Exact optimal-transport cost between two nonnegative atomic measures
    on the same sorted 1-D grid for the cost |x-y|^2 * invtau / 2.

    a, b are mass vectors of equal total mass (the monotone plan is optimal
    for any convex translation-invariant cost).
    """
    n = a.size
    cost = 0.0
    i = 0
    j = 0
    A = a[0]
    B = b[0]
    while True:
        m = A if A < B else B
        if m > 0.0:
            d = xs[i] - xs[j]
            cost += m * 0.5 * invtau * d * d
        A -= m
        B -= m
        if A <= 0.0:
            i += 1
            if i >= n:
                break
            A += a[i]
        if B <= 0.0:
            j += 1
            if j >= n:
                break
            B += b[j]
    return cost
