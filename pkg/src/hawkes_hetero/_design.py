"""Basis blocks of the linear intensity model and their exact integrals.

A block knows how to evaluate its columns at arbitrary query times, integrate
them over every trial, and give the running integral from 0 to a query time.
All three are what the likelihood, the time-rescaling test and conditional
re-simulation need.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import _kernels as K
from .core import BSplineBasis, Stacked, smoothed_integral_stacked


def _trial_of(q: Stacked) -> np.ndarray:
    return q.trial_index()


def _per_trial_counts(src: Stacked) -> np.ndarray:
    return np.diff(src.offsets).astype(np.float64)


class Block:
    names: list[str]
    # total kernel mass of each column per source event, used for mean-centering
    mass: np.ndarray | None = None
    source: Stacked | None = None

    def values(self, q: Stacked) -> np.ndarray:
        raise NotImplementedError

    def integrals(self) -> np.ndarray:
        raise NotImplementedError

    def cumulative(self, q: Stacked) -> np.ndarray:
        raise NotImplementedError


class ConstantBlock(Block):
    def __init__(self, n_trials: int, horizon: float):
        self.names = ["baseline"]
        self.n_trials, self.horizon = n_trials, horizon

    def values(self, q):
        return np.ones((q.times.size, 1))

    def integrals(self):
        return np.array([self.n_trials * self.horizon])

    def cumulative(self, q):
        return q.times[:, None].copy()


class SmoothedBlock(Block):
    """Gaussian-smoothed source train (two-sided kernel)."""

    def __init__(self, source: Stacked, sigma: float, label: str):
        self.source, self.sigma = source, float(sigma)
        self.names = [f"smoothed[{label}]"]
        self.mass = np.array([1.0])

    def values(self, q):
        return K.gauss_sums(q.times, q.offsets, self.source.times, self.source.offsets, self.sigma)[:, None]

    def dvalues_dsigma(self, q):
        return K.gauss_dsigma_sums(q.times, q.offsets, self.source.times, self.source.offsets, self.sigma)[:, None]

    def integrals(self):
        return np.array([smoothed_integral_stacked(self.source, self.sigma)])

    def dintegral_dsigma(self) -> float:
        s, t, T = self.sigma, self.source.times, self.source.horizon
        w = lambda x: np.exp(-0.5 * (x / s) ** 2) / (np.sqrt(2 * np.pi) * s)
        return float(np.sum(-(T - t) / s * w(T - t) - t / s * w(t)))

    def cumulative(self, q):
        src = self.source
        left = ndtr(-src.times / self.sigma)
        per_trial = np.bincount(src.trial_index(), weights=left, minlength=src.n_trials)
        cdf = K.gauss_cdf_sums(q.times, q.offsets, src.times, src.offsets, self.sigma)
        return (cdf - per_trial[_trial_of(q)])[:, None]


class SquareBlock(Block):
    """Count of source events in the causal window (0, width] before each query time."""

    def __init__(self, source: Stacked, width: float, label: str):
        self.source, self.width = source, float(width)
        self.names = [f"impact[{label}]"]
        self.mass = np.array([self.width])

    def values(self, q):
        idx, _, _ = K.lagged_pairs(q.times, q.offsets, self.source.times, self.source.offsets, self.width)
        return np.bincount(idx, minlength=q.times.size).astype(np.float64)[:, None]

    def integrals(self):
        return np.array([np.minimum(self.width, self.source.horizon - self.source.times).sum()])

    def cumulative(self, q):
        idx, lag, _ = K.lagged_pairs(q.times, q.offsets, self.source.times, self.source.offsets, self.width)
        older = K.count_older(q.times, q.offsets, self.source.times, self.source.offsets, self.width)
        return (older * self.width + np.bincount(idx, weights=lag, minlength=q.times.size))[:, None]


class SplineBlock(Block):
    """B-spline impact bases on the lag window [0, L]."""

    def __init__(self, source: Stacked, basis: BSplineBasis, label: str):
        self.source, self.basis = source, basis
        self.names = [f"impact[{label}][{k}]" for k in range(basis.n_bases)]
        self.mass = basis.integrals()

    def _aggregate(self, idx, cols, n):
        out = np.zeros((n, cols.shape[1]))
        np.add.at(out, idx, cols)
        return out

    def values(self, q):
        idx, lag, _ = K.lagged_pairs(q.times, q.offsets, self.source.times, self.source.offsets, self.basis.support)
        return self._aggregate(idx, self.basis.evaluate(lag), q.times.size)

    def integrals(self):
        rem = self.source.horizon - self.source.times
        return self.basis.partial_integrals(rem).sum(axis=0)

    def cumulative(self, q):
        L = self.basis.support
        idx, lag, _ = K.lagged_pairs(q.times, q.offsets, self.source.times, self.source.offsets, L)
        older = K.count_older(q.times, q.offsets, self.source.times, self.source.offsets, L)
        return older[:, None] * self.mass[None, :] + self._aggregate(idx, self.basis.partial_integrals(lag),
                                                                     q.times.size)


class ExponentialBlock(Block):
    """Causal exponential kernel exp(-gamma * lag) summed over all earlier source events."""

    def __init__(self, source: Stacked, gamma: float, label: str):
        self.source, self.gamma = source, float(gamma)
        self.names = [f"impact[{label}]"]
        self.mass = np.array([1.0 / self.gamma])

    def _pairs(self, q):
        return K.lagged_pairs(q.times, q.offsets, self.source.times, self.source.offsets, np.inf)

    def values(self, q):
        idx, lag, _ = self._pairs(q)
        return np.bincount(idx, weights=np.exp(-self.gamma * lag), minlength=q.times.size)[:, None]

    def dvalues_dgamma(self, q):
        idx, lag, _ = self._pairs(q)
        return np.bincount(idx, weights=-lag * np.exp(-self.gamma * lag), minlength=q.times.size)[:, None]

    def integrals(self):
        rem = self.source.horizon - self.source.times
        return np.array([np.sum(-np.expm1(-self.gamma * rem)) / self.gamma])

    def dintegral_dgamma(self) -> float:
        g, rem = self.gamma, self.source.horizon - self.source.times
        return float(np.sum(-(-np.expm1(-g * rem)) / g ** 2 + rem * np.exp(-g * rem) / g))

    def cumulative(self, q):
        idx, lag, _ = self._pairs(q)
        return np.bincount(idx, weights=-np.expm1(-self.gamma * lag) / self.gamma, minlength=q.times.size)[:, None]


class TabulatedBlock(Block):
    """Known covariate given on a per-trial grid, linearly interpolated."""

    def __init__(self, grid: np.ndarray, values: np.ndarray, horizon: float, label: str):
        self.grid = np.asarray(grid, float)
        self.table = np.atleast_2d(np.asarray(values, float))
        self.horizon = horizon
        self.names = [f"covariate[{label}]"]
        if self.grid[0] > 0 or self.grid[-1] < horizon:
            raise ValueError("tabulated covariate grid must cover [0, horizon]")

    def values(self, q):
        out = np.empty(q.times.size)
        for r in range(q.n_trials):
            sl = slice(q.offsets[r], q.offsets[r + 1])
            out[sl] = np.interp(q.times[sl], self.grid, self.table[r])
        return out[:, None]

    def _antiderivative(self, r, t):
        g, v = self.grid, self.table[r]
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(g))])
        k = np.clip(np.searchsorted(g, t, side="right") - 1, 0, g.size - 2)
        slope = (v[k + 1] - v[k]) / (g[k + 1] - g[k])
        x = t - g[k]
        return cum[k] + v[k] * x + 0.5 * slope * x * x

    def _running(self, r, t):
        """Exact integral of the piecewise-linear interpolant from 0 to t."""
        return self._antiderivative(r, np.asarray(t, float)) - self._antiderivative(r, np.zeros(1))[0]

    def integrals(self):
        return np.array([sum(self._running(r, [self.horizon])[0] for r in range(self.table.shape[0]))])

    def cumulative(self, q):
        out = np.empty(q.times.size)
        for r in range(q.n_trials):
            sl = slice(q.offsets[r], q.offsets[r + 1])
            out[sl] = self._running(r, q.times[sl])
        return out[:, None]


@dataclass
class Centered(Block):
    """Mean-centred version of a source-driven block (diagnostic option)."""

    inner: Block

    def __post_init__(self):
        self.names = [n + "[centered]" for n in self.inner.names]
        self.rates = _per_trial_counts(self.inner.source) / self.inner.source.horizon

    def values(self, q):
        return self.inner.values(q) - (self.rates[_trial_of(q)][:, None] * self.inner.mass[None, :])

    def integrals(self):
        return self.inner.integrals() - self.rates.sum() * self.inner.source.horizon * self.inner.mass

    def cumulative(self, q):
        return self.inner.cumulative(q) - (self.rates[_trial_of(q)] * q.times)[:, None] * self.inner.mass[None, :]
