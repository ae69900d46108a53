"""Event containers, kernels, B-spline bases and their exact integrals.

All times are in seconds.  Every container is immutable after construction
and every function here is pure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr

SQRT_2PI = np.sqrt(2.0 * np.pi)


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EventSequence:
    """Sorted event times of one process in one trial, observed on [0, horizon]."""

    timestamps: np.ndarray
    horizon: float

    def __post_init__(self):
        ts = _frozen(self.timestamps)
        horizon = float(self.horizon)
        if not horizon > 0:
            raise ValueError(f"horizon must be positive, got {horizon}")
        if ts.size:
            if not np.all(np.isfinite(ts)):
                raise ValueError("timestamps must be finite")
            if ts[0] < 0 or ts[-1] > horizon:
                raise ValueError("timestamps must lie in [0, horizon]")
            if np.any(np.diff(ts) <= 0):
                raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "horizon", horizon)

    def __len__(self) -> int:
        return self.timestamps.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventSequence):
            return NotImplemented
        return self.horizon == other.horizon and np.array_equal(self.timestamps, other.timestamps)

    __hash__ = None


@dataclass(frozen=True)
class TrialSet:
    """Repeated-trial dataset: for each process id, one EventSequence per trial."""

    processes: Mapping[str, tuple[EventSequence, ...]]
    trial_count: int
    trial_horizon: float

    def __post_init__(self):
        n = int(self.trial_count)
        horizon = float(self.trial_horizon)
        if n < 0:
            raise ValueError("trial_count must be non-negative")
        procs = {}
        for pid, seqs in self.processes.items():
            seqs = tuple(seqs)
            if len(seqs) != n:
                raise ValueError(f"process {pid!r} has {len(seqs)} trials, expected {n}")
            for s in seqs:
                if s.horizon != horizon:
                    raise ValueError(f"process {pid!r} has a sequence with horizon {s.horizon} != {horizon}")
            procs[str(pid)] = seqs
        object.__setattr__(self, "processes", procs)
        object.__setattr__(self, "trial_count", n)
        object.__setattr__(self, "trial_horizon", horizon)

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, Sequence[Sequence[float]]], horizon: float) -> "TrialSet":
        """Build from ``{pid: [times_trial0, times_trial1, ...]}``."""
        counts = {len(v) for v in arrays.values()}
        if len(counts) > 1:
            raise ValueError("all processes need the same number of trials")
        n = counts.pop() if counts else 0
        procs = {pid: tuple(EventSequence(np.sort(np.asarray(t, float)), horizon) for t in v)
                 for pid, v in arrays.items()}
        return cls(procs, n, horizon)

    @property
    def process_ids(self) -> list[str]:
        return list(self.processes)

    def times(self, pid: str) -> list[np.ndarray]:
        return [s.timestamps for s in self.processes[pid]]

    def stacked(self, pid: str) -> "Stacked":
        return Stacked.from_sequences(self.processes[pid], self.trial_horizon)

    def subset(self, trials: Sequence[int]) -> "TrialSet":
        idx = list(trials)
        return TrialSet({p: tuple(s[i] for i in idx) for p, s in self.processes.items()},
                        len(idx), self.trial_horizon)

    def total_time(self) -> float:
        return self.trial_count * self.trial_horizon

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrialSet):
            return NotImplemented
        return (self.trial_count == other.trial_count and self.trial_horizon == other.trial_horizon
                and self.processes.keys() == other.processes.keys()
                and all(a == b for p in self.processes
                        for a, b in zip(self.processes[p], other.processes[p])))

    __hash__ = None


@dataclass(frozen=True)
class Stacked:
    """Concatenated per-trial event times with CSR offsets, used by the numeric kernels."""

    times: np.ndarray
    offsets: np.ndarray
    horizon: float

    @classmethod
    def from_sequences(cls, seqs: Sequence[EventSequence], horizon: float) -> "Stacked":
        return cls.from_arrays([s.timestamps for s in seqs], horizon)

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray], horizon: float) -> "Stacked":
        lens = np.array([len(a) for a in arrays], dtype=np.int64)
        offsets = np.zeros(len(arrays) + 1, dtype=np.int64)
        np.cumsum(lens, out=offsets[1:])
        times = np.concatenate([np.asarray(a, float) for a in arrays]) if len(arrays) else np.zeros(0)
        return cls(np.ascontiguousarray(times, dtype=np.float64), offsets, float(horizon))

    @property
    def n_trials(self) -> int:
        return self.offsets.size - 1

    def trial(self, r: int) -> np.ndarray:
        return self.times[self.offsets[r]:self.offsets[r + 1]]

    def trial_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_trials), np.diff(self.offsets))


# ---------------------------------------------------------------------------
# Gaussian smoothing kernel


@dataclass(frozen=True)
class GaussianKernel:
    sigma_w: float

    def __post_init__(self):
        if not self.sigma_w > 0:
            raise ValueError("sigma_w must be positive")

    def __call__(self, tau):
        return gaussian_eval(tau, self.sigma_w)


def gaussian_eval(tau, sigma_w):
    """Zero-mean normal density with standard deviation ``sigma_w`` evaluated at ``tau``."""
    sigma_w = float(sigma_w)
    if not sigma_w > 0:
        raise ValueError(f"sigma_w must be positive, got {sigma_w}")
    tau = np.asarray(tau, dtype=np.float64)
    out = np.exp(-0.5 * (tau / sigma_w) ** 2) / (SQRT_2PI * sigma_w)
    return float(out) if out.ndim == 0 else out


def smoothed_train(events: EventSequence, sigma_w: float, t):
    """Kernel-smoothed spike train sum_m W(t - t_m) over all events (two-sided)."""
    t = np.asarray(t, dtype=np.float64)
    ts = events.timestamps
    if ts.size == 0:
        out = np.zeros_like(t)
    else:
        out = np.asarray(gaussian_eval(t[..., None] - ts, sigma_w)).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def _interval_mass(lo, hi):
    """Phi(hi) - Phi(lo) for lo <= 0 <= hi without cancellation in the tails."""
    return 1.0 - ndtr(-hi) - ndtr(lo)


def smoothed_train_integral(events: EventSequence, sigma_w: float) -> float:
    """Exact integral of the smoothed train over [0, T] (kernel mass kept inside the horizon)."""
    if not sigma_w > 0:
        raise ValueError("sigma_w must be positive")
    ts = events.timestamps
    return float(np.sum(_interval_mass(-ts / sigma_w, (events.horizon - ts) / sigma_w)))


def smoothed_integral_stacked(src: Stacked, sigma_w: float) -> float:
    """Same as smoothed_train_integral summed over all trials of a stacked source."""
    ts = src.times
    return float(np.sum(_interval_mass(-ts / sigma_w, (src.horizon - ts) / sigma_w)))


# ---------------------------------------------------------------------------
# Square impact window


@dataclass(frozen=True)
class SquareWindow:
    """Impact function amplitude * 1[0, width] (causal)."""

    width: float
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("square window width must be positive")

    @property
    def support(self) -> float:
        return self.width

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=np.float64)
        return np.where((tau >= 0) & (tau <= self.width), self.amplitude, 0.0)

    def integral(self) -> float:
        return self.amplitude * self.width


# ---------------------------------------------------------------------------
# B-splines


def pad_knots(distinct_knots, degree: int) -> np.ndarray:
    """Repeat the end knots ``degree`` extra times."""
    k = np.asarray(distinct_knots, dtype=np.float64)
    if k.ndim != 1 or k.size < 2 or np.any(np.diff(k) <= 0):
        raise ValueError("distinct knots must be a strictly increasing sequence of length >= 2")
    if degree < 0:
        raise ValueError("degree must be non-negative")
    return np.concatenate([np.repeat(k[0], degree), k, np.repeat(k[-1], degree)])


def _check_index(i: int, p: int, knots: np.ndarray):
    n_basis = knots.size - p - 1
    if not 0 <= i < n_basis:
        raise ValueError(f"basis index {i} out of range for {n_basis} bases")


def _cox_de_boor(i: int, p: int, knots: np.ndarray, x: np.ndarray) -> np.ndarray:
    if p == 0:
        return ((x >= knots[i]) & (x < knots[i + 1])).astype(np.float64)
    out = np.zeros_like(x)
    d1 = knots[i + p] - knots[i]
    if d1 > 0:
        out += (x - knots[i]) / d1 * _cox_de_boor(i, p - 1, knots, x)
    d2 = knots[i + p + 1] - knots[i + 1]
    if d2 > 0:
        out += (knots[i + p + 1] - x) / d2 * _cox_de_boor(i + 1, p - 1, knots, x)
    return out


def bspline_eval(basis_index: int, degree: int, knots, x):
    """B_{i,p}(x) by the Cox-de Boor recursion on a padded knot vector (0/0 taken as 0)."""
    knots = np.asarray(knots, dtype=np.float64)
    _check_index(basis_index, degree, knots)
    xa = np.asarray(x, dtype=np.float64)
    out = _cox_de_boor(basis_index, degree, knots, np.atleast_1d(xa))
    return float(out[0]) if xa.ndim == 0 else out.reshape(xa.shape)


def bspline_integral(basis_index: int, degree: int, knots) -> float:
    """Integral of B_{i,p} over the real line: (t_{i+p+1} - t_i) / (p + 1)."""
    knots = np.asarray(knots, dtype=np.float64)
    _check_index(basis_index, degree, knots)
    return float((knots[basis_index + degree + 1] - knots[basis_index]) / (degree + 1))


def bspline_partial_integral(basis_index: int, degree: int, knots, x):
    """Integral of B_{i,p} from -inf to x.

    Uses the derivative identity of B-splines: on the knot vector extended by
    p + 1 extra repeats of the last knot, the antiderivative equals
    (t_{i+p+1} - t_i)/(p+1) * sum_{j=i}^{i+p} B_{j,p+1}(x).
    """
    knots = np.asarray(knots, dtype=np.float64)
    _check_index(basis_index, degree, knots)
    i, p = basis_index, degree
    xa = np.atleast_1d(np.asarray(x, dtype=np.float64))
    ext = np.concatenate([knots, np.repeat(knots[-1], p + 1)])
    lo, hi = knots[i], knots[i + p + 1]
    full = (hi - lo) / (p + 1)
    inside = (xa >= lo) & (xa < hi)
    out = np.where(xa >= hi, full, 0.0)
    if np.any(inside):
        xi = xa[inside]
        acc = np.zeros_like(xi)
        for j in range(i, i + p + 1):
            acc += _cox_de_boor(j, p + 1, ext, xi)
        out[inside] = full * acc
    xs = np.asarray(x)
    return float(out[0]) if xs.ndim == 0 else out.reshape(xs.shape)


@dataclass(frozen=True)
class BSplineBasis:
    """Family of B-spline bases of one degree built from distinct knots."""

    degree: int
    distinct_knots: np.ndarray
    knots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        dk = _frozen(self.distinct_knots)
        object.__setattr__(self, "distinct_knots", dk)
        object.__setattr__(self, "degree", int(self.degree))
        object.__setattr__(self, "knots", _frozen(pad_knots(dk, self.degree)))

    @classmethod
    def uniform(cls, support: float, n_knots: int, degree: int = 3) -> "BSplineBasis":
        return cls(degree, np.linspace(0.0, support, n_knots))

    @property
    def n_bases(self) -> int:
        return self.distinct_knots.size + self.degree - 1

    @property
    def support(self) -> float:
        return float(self.distinct_knots[-1])

    def evaluate(self, x) -> np.ndarray:
        """Matrix of shape (len(x), n_bases)."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return np.column_stack([_cox_de_boor(i, self.degree, self.knots, x) for i in range(self.n_bases)])

    def integrals(self) -> np.ndarray:
        return np.array([bspline_integral(i, self.degree, self.knots) for i in range(self.n_bases)])

    def partial_integrals(self, x) -> np.ndarray:
        """Matrix (len(x), n_bases) of integrals of each basis from -inf to x."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return np.column_stack([bspline_partial_integral(i, self.degree, self.knots, x)
                                for i in range(self.n_bases)])
