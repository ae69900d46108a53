"""Compiled inner loops over (query time, source event) pairs.

Query times and source events are stored as concatenated per-trial arrays with
CSR offsets (see ``core.Stacked``); pairs never cross trial boundaries.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
# Terms further than this many standard deviations away are dropped: a Gaussian
# term there is below 2e-22 of the peak and the normal CDF is within 8e-24 of 0 or 1.
GAUSS_CUTOFF = 10.0


@njit(cache=True, fastmath=True)
def gauss_sums(q, q_off, src, src_off, sigma):
    """out[n] = sum_m W(q_n - t_m; sigma) over source events of the same trial."""
    out = np.zeros(q.size)
    cut = GAUSS_CUTOFF * sigma
    norm = _INV_SQRT_2PI / sigma
    inv = 1.0 / sigma
    for r in range(q_off.size - 1):
        lo = src_off[r]
        hi_end = src_off[r + 1]
        hi = lo
        for n in range(q_off[r], q_off[r + 1]):
            t = q[n]
            while lo < hi_end and src[lo] < t - cut:
                lo += 1
            if hi < lo:
                hi = lo
            while hi < hi_end and src[hi] <= t + cut:
                hi += 1
            acc = 0.0
            for m in range(lo, hi):
                z = (t - src[m]) * inv
                acc += math.exp(-0.5 * z * z)
            out[n] = acc * norm
    return out


@njit(cache=True, fastmath=True)
def gauss_dsigma_sums(q, q_off, src, src_off, sigma):
    """out[n] = sum_m dW(q_n - t_m; sigma)/dsigma."""
    out = np.zeros(q.size)
    cut = GAUSS_CUTOFF * sigma
    norm = _INV_SQRT_2PI / sigma
    for r in range(q_off.size - 1):
        lo = src_off[r]
        hi_end = src_off[r + 1]
        hi = lo
        for n in range(q_off[r], q_off[r + 1]):
            t = q[n]
            while lo < hi_end and src[lo] < t - cut:
                lo += 1
            if hi < lo:
                hi = lo
            while hi < hi_end and src[hi] <= t + cut:
                hi += 1
            acc = 0.0
            for m in range(lo, hi):
                z = (t - src[m]) / sigma
                acc += math.exp(-0.5 * z * z) * (z * z - 1.0)
            out[n] = acc * norm / sigma
    return out


@njit(cache=True)
def gauss_cdf_sums(q, q_off, src, src_off, sigma):
    """out[n] = sum_m Phi((q_n - t_m)/sigma) over source events of the same trial."""
    out = np.zeros(q.size)
    cut = GAUSS_CUTOFF * sigma
    inv = 1.0 / (sigma * math.sqrt(2.0))
    for r in range(q_off.size - 1):
        lo = src_off[r]
        hi_end = src_off[r + 1]
        for n in range(q_off[r], q_off[r + 1]):
            t = q[n]
            while lo < hi_end and src[lo] < t - cut:
                lo += 1
            acc = float(lo - src_off[r])
            m = lo
            while m < hi_end and src[m] <= t + cut:
                acc += 0.5 * math.erfc(-(t - src[m]) * inv)
                m += 1
            out[n] = acc
    return out


@njit(cache=True)
def _count_pairs(q, q_off, src, src_off, max_lag):
    total = 0
    for r in range(q_off.size - 1):
        a = src_off[r]
        b = src_off[r]
        end = src_off[r + 1]
        for n in range(q_off[r], q_off[r + 1]):
            t = q[n]
            while a < end and src[a] < t - max_lag:
                a += 1
            while b < end and src[b] < t:
                b += 1
            total += b - a
    return total


@njit(cache=True)
def _fill_pairs(q, q_off, src, src_off, max_lag, idx, lag, src_idx):
    k = 0
    for r in range(q_off.size - 1):
        a = src_off[r]
        b = src_off[r]
        end = src_off[r + 1]
        for n in range(q_off[r], q_off[r + 1]):
            t = q[n]
            while a < end and src[a] < t - max_lag:
                a += 1
            while b < end and src[b] < t:
                b += 1
            for m in range(a, b):
                idx[k] = n
                lag[k] = t - src[m]
                src_idx[k] = m
                k += 1


def lagged_pairs(q, q_off, src, src_off, max_lag):
    """All same-trial pairs with t_m < q_n and q_n - t_m <= max_lag.

    Returns (query index, lag, source index) arrays.
    """
    max_lag = float(max_lag)
    n = _count_pairs(q, q_off, src, src_off, max_lag)
    idx = np.empty(n, dtype=np.int64)
    lag = np.empty(n, dtype=np.float64)
    sidx = np.empty(n, dtype=np.int64)
    _fill_pairs(q, q_off, src, src_off, max_lag, idx, lag, sidx)
    return idx, lag, sidx


@njit(cache=True)
def count_older(q, q_off, src, src_off, max_lag):
    """out[n] = number of same-trial source events with q_n - t_m > max_lag."""
    out = np.zeros(q.size, dtype=np.int64)
    for r in range(q_off.size - 1):
        a = src_off[r]
        end = src_off[r + 1]
        for n in range(q_off[r], q_off[r + 1]):
            while a < end and src[a] < q[n] - max_lag:
                a += 1
            out[n] = a - src_off[r]
    return out
