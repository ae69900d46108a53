"""Compiled thinning loop for one trial of a multivariate Hawkes process.

Backgrounds arrive as "groups" (processes that share one realization point at
the same group).  Impacts are piecewise polynomials on [0, support] in the local
power basis, highest power first (scipy ``PPoly`` layout).
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

BG_CONSTANT = 0
BG_SINUSOID = 1
BG_BUMPS = 2
BG_TABLE = 3

# Gaussian bumps further than this many widths away are dropped (relative size
# below 2e-22 of a single bump's peak).
BUMP_CUTOFF = 10.0
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit(cache=True)
def _bump_value(t, centers, widths, lo, hi, max_width):
    cut = BUMP_CUTOFF * max_width
    a = np.searchsorted(centers[lo:hi], t - cut) + lo
    b = np.searchsorted(centers[lo:hi], t + cut, side="right") + lo
    acc = 0.0
    for k in range(a, b):
        z = (t - centers[k]) / widths[k]
        acc += math.exp(-0.5 * z * z) * _INV_SQRT_2PI / widths[k]
    return acc


@njit(cache=True)
def _bump_sup(t0, t1, centers, widths, lo, hi, max_width):
    cut = BUMP_CUTOFF * max_width
    a = np.searchsorted(centers[lo:hi], t0 - cut) + lo
    b = np.searchsorted(centers[lo:hi], t1 + cut, side="right") + lo
    acc = 0.0
    for k in range(a, b):
        c = centers[k]
        if c < t0:
            d = t0 - c
        elif c > t1:
            d = c - t1
        else:
            d = 0.0
        z = d / widths[k]
        acc += math.exp(-0.5 * z * z) * _INV_SQRT_2PI / widths[k]
    return acc


@njit(cache=True)
def _sine_sup(t0, t1, amp, period, phase):
    x0 = t0 / period - phase
    x1 = t1 / period - phase
    best = max(amp * math.sin(2 * math.pi * x0), amp * math.sin(2 * math.pi * x1))
    crest = 0.25 if amp >= 0 else 0.75
    k = math.ceil(x0 - crest)
    if crest + k <= x1:
        best = abs(amp)
    return best


@njit(cache=True)
def background_value(g, t, kind, scal, b_off, centers, widths, tab_off, tab_t, tab_v):
    kd = kind[g]
    if kd == BG_CONSTANT:
        return scal[g, 0]
    if kd == BG_SINUSOID:
        return scal[g, 0] * math.sin(2 * math.pi * (t / scal[g, 1] - scal[g, 2]))
    if kd == BG_BUMPS:
        return _bump_value(t, centers, widths, b_off[g], b_off[g + 1], scal[g, 0])
    lo = tab_off[g]
    hi = tab_off[g + 1]
    return np.interp(t, tab_t[lo:hi], tab_v[lo:hi])


@njit(cache=True)
def background_sup(g, t0, t1, kind, scal, b_off, centers, widths, tab_off, tab_t, tab_v):
    kd = kind[g]
    if kd == BG_CONSTANT:
        return scal[g, 0]
    if kd == BG_SINUSOID:
        return _sine_sup(t0, t1, scal[g, 0], scal[g, 1], scal[g, 2])
    if kd == BG_BUMPS:
        return _bump_sup(t0, t1, centers, widths, b_off[g], b_off[g + 1], scal[g, 0])
    lo = tab_off[g]
    hi = tab_off[g + 1]
    best = max(np.interp(t0, tab_t[lo:hi], tab_v[lo:hi]), np.interp(t1, tab_t[lo:hi], tab_v[lo:hi]))
    for k in range(lo, hi):
        if t0 < tab_t[k] < t1 and tab_v[k] > best:
            best = tab_v[k]
    return best


@njit(cache=True)
def _ppoly(tau, brk, coef, b0, b1, c0, deg):
    # brk[b0:b1] are the breakpoints, coef[c0 + piece*(deg+1) + j] the coefficients.
    npieces = b1 - b0 - 1
    piece = np.searchsorted(brk[b0:b1], tau, side="right") - 1
    if piece < 0:
        return 0.0
    if piece >= npieces:
        piece = npieces - 1
    x = tau - brk[b0 + piece]
    base = c0 + piece * (deg + 1)
    acc = 0.0
    for j in range(deg + 1):
        acc = acc * x + coef[base + j]
    return acc


@njit(cache=True)
def simulate_trial(seed, horizon, lookahead, alpha, bg_group,
                   kind, scal, b_off, centers, widths, tab_off, tab_t, tab_v,
                   imp_src, imp_tgt, imp_support, imp_pos, imp_deg, imp_boff, imp_brk, imp_coff, imp_coef,
                   capacity):
    """Return (events[P, capacity], counts[P], status).

    status is 0 on success, 1 when a process exceeded ``capacity`` and 2 if an
    intensity ever exceeded the majorant (which would indicate a bug).
    """
    np.random.seed(seed)
    P = alpha.size
    G = kind.size
    K = imp_src.size
    events = np.zeros((P, capacity))
    counts = np.zeros(P, dtype=np.int64)
    lam = np.zeros(P)
    bgv = np.zeros(G)
    t = 0.0
    while t < horizon:
        wend = min(t + lookahead, horizon)
        bound = 0.0
        for g in range(G):
            bgv[g] = background_sup(g, t, wend, kind, scal, b_off, centers, widths, tab_off, tab_t, tab_v)
        for p in range(P):
            bound += max(alpha[p] + bgv[bg_group[p]], 0.0)
        for k in range(K):
            if imp_pos[k] <= 0.0:
                continue
            s = imp_src[k]
            m = counts[s] - 1
            c = 0
            while m >= 0 and events[s, m] >= t - imp_support[k]:
                c += 1
                m -= 1
            bound += imp_pos[k] * c
        # propose within [t, wend] with the fixed bound until acceptance or window end
        accepted = False
        while True:
            if bound <= 0.0:
                t = wend
                break
            step = np.random.exponential(1.0) / bound
            if step <= 0.0:
                continue
            t = t + step
            if t >= wend:
                t = wend
                break
            for g in range(G):
                bgv[g] = background_value(g, t, kind, scal, b_off, centers, widths, tab_off, tab_t, tab_v)
            for p in range(P):
                lam[p] = alpha[p] + bgv[bg_group[p]]
            for k in range(K):
                s = imp_src[k]
                m = counts[s] - 1
                while m >= 0:
                    tau = t - events[s, m]
                    if tau > imp_support[k]:
                        break
                    lam[imp_tgt[k]] += _ppoly(tau, imp_brk, imp_coef, imp_boff[k], imp_boff[k + 1],
                                              imp_coff[k], imp_deg[k])
                    m -= 1
            total = 0.0
            for p in range(P):
                if lam[p] < 0.0:
                    lam[p] = 0.0
                total += lam[p]
            if total > bound * (1.0 + 1e-9):
                return events, counts, 2
            u = np.random.random() * bound
            if u < total:
                acc = 0.0
                chosen = P - 1
                for p in range(P):
                    acc += lam[p]
                    if u < acc:
                        chosen = p
                        break
                if counts[chosen] >= capacity:
                    return events, counts, 1
                events[chosen, counts[chosen]] = t
                counts[chosen] += 1
                accepted = True
                break
        if not accepted and t >= horizon:
            break
    return events, counts, 0
