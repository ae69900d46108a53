"""Continuous-time maximum likelihood for linear Hawkes-type intensities.

The fitted intensity of the target process is linear in its coefficients,

    lambda(t) = Psi(t) . beta,

with columns for a constant baseline, optional Gaussian-smoothed source trains
(the nuisance term standing in for the unobserved background), and causal
impact bases (square window, B-splines or exponential).  The negative
log-likelihood

    -sum_n log lambda(t_n) + integral_0^T lambda

is convex in beta.  Integrals are evaluated in closed form; optimization is a
damped Newton method that never leaves the region where every event intensity
is positive.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy.optimize import brentq

from . import _design as D
from .core import BSplineBasis, Stacked, TrialSet

DEFAULT_GRID = tuple(np.geomspace(0.005, 0.5, 25))
TOL = 1e-8
MAX_ITER = 100


# ---------------------------------------------------------------------------
# Design specification


@dataclass(frozen=True)
class SquareBasis:
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("square window width must be positive")


@dataclass(frozen=True)
class SplineBasis:
    """Cubic (by default) B-splines with ``n_knots`` equally spaced knots on [0, support]."""

    support: float
    n_knots: int = 9
    degree: int = 3

    def __post_init__(self):
        if not self.support > 0 or self.n_knots < 2:
            raise ValueError("spline impact needs support > 0 and at least 2 knots")

    def basis(self) -> BSplineBasis:
        return BSplineBasis.uniform(self.support, self.n_knots, self.degree)


@dataclass(frozen=True)
class ExponentialBasis:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


ImpactBasis = Union[SquareBasis, SplineBasis, ExponentialBasis]


@dataclass(frozen=True)
class Covariate:
    """Known per-trial covariate (e.g. a true background) on a common time grid."""

    name: str
    grid: np.ndarray
    values: np.ndarray  # shape (trials, len(grid))


@dataclass(frozen=True)
class DesignSpec:
    """Which columns enter the target's intensity.

    ``sigma_w`` is a single width (fixed) or an increasing sequence (grid search).
    ``nuisance_sources`` lists the processes whose smoothed trains enter as
    nuisance columns; by default every impact source other than the target.
    """

    target: str
    sources: tuple[tuple[str, ImpactBasis], ...] = ()
    include_smoothed_nuisance: bool = True
    sigma_w: Union[float, tuple[float, ...]] = DEFAULT_GRID
    mean_center_bases: bool = False
    nuisance_sources: Optional[tuple[str, ...]] = None
    covariates: tuple[Covariate, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple((str(s), b) for s, b in self.sources))
        if isinstance(self.sigma_w, (int, float)):
            if not self.sigma_w > 0:
                raise ValueError("sigma_w must be positive")
            object.__setattr__(self, "sigma_w", float(self.sigma_w))
        else:
            grid = tuple(float(s) for s in self.sigma_w)
            if not grid or grid[0] <= 0 or any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError("sigma_w grid must be non-empty, positive and increasing")
            object.__setattr__(self, "sigma_w", grid)
        if self.nuisance_sources is not None:
            object.__setattr__(self, "nuisance_sources", tuple(self.nuisance_sources))

    @classmethod
    def pair(cls, source: str, target: str, impact: ImpactBasis, sigma_w=DEFAULT_GRID,
             nuisance: bool = True, **kw) -> "DesignSpec":
        return cls(target, ((source, impact),), include_smoothed_nuisance=nuisance, sigma_w=sigma_w, **kw)

    @property
    def is_grid(self) -> bool:
        return isinstance(self.sigma_w, tuple)

    @property
    def grid(self) -> tuple[float, ...]:
        return self.sigma_w if self.is_grid else (self.sigma_w,)

    def nuisance_ids(self) -> tuple[str, ...]:
        if not self.include_smoothed_nuisance:
            return ()
        if self.nuisance_sources is not None:
            return self.nuisance_sources
        ids = []
        for s, _ in self.sources:
            if s != self.target and s not in ids:
                ids.append(s)
        return tuple(ids)

    def fixed(self, sigma_w: float) -> "DesignSpec":
        return replace(self, sigma_w=float(sigma_w))

    def to_dict(self) -> dict:
        def basis(b):
            return {"kind": type(b).__name__, **asdict(b)}
        return {"target": self.target, "sources": [[s, basis(b)] for s, b in self.sources],
                "include_smoothed_nuisance": self.include_smoothed_nuisance,
                "sigma_w": list(self.sigma_w) if self.is_grid else self.sigma_w,
                "mean_center_bases": self.mean_center_bases,
                "nuisance_sources": list(self.nuisance_ids()),
                "covariates": [c.name for c in self.covariates]}


# ---------------------------------------------------------------------------
# Linear intensity model


class LinearModel:
    """Design matrix at the target's events plus exact column integrals."""

    def __init__(self, X: np.ndarray, integrals: np.ndarray, names: list[str]):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.c = np.asarray(integrals, dtype=np.float64)
        self.names = list(names)

    def intensities(self, beta) -> np.ndarray:
        return self.X @ np.asarray(beta, float)

    def neg_loglik(self, beta) -> float:
        lam = self.intensities(beta)
        if lam.size and lam.min() <= 0:
            return math.inf
        return float(-np.log(lam).sum() + self.c @ beta)

    def grad_hess(self, beta):
        lam = self.intensities(beta)
        if lam.size and lam.min() <= 0:
            raise ValueError("infeasible point: an event intensity is not positive")
        inv = 1.0 / lam
        g = -(self.X.T @ inv) + self.c
        Xw = self.X * inv[:, None]
        return g, Xw.T @ Xw


@dataclass
class NewtonResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    hess: np.ndarray
    converged: bool
    iterations: int
    trace: list[float]


def _solve(H, g):
    try:
        return np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(H, g, rcond=None)[0]


def newton_minimize(model: LinearModel, x0, tol: float = TOL, max_iter: int = MAX_ITER) -> NewtonResult:
    """Damped Newton with Armijo backtracking, restricted to positive event intensities."""
    x = np.array(x0, dtype=float)
    f = model.neg_loglik(x)
    if not np.isfinite(f):
        raise ValueError("initial point is infeasible")
    trace = [f]
    g, H = model.grad_hess(x)
    for it in range(max_iter + 1):
        if np.max(np.abs(g)) < tol * (1.0 + abs(f)):
            return NewtonResult(x, f, g, H, True, it, trace)
        if it == max_iter:
            break
        step = -_solve(H, g)
        slope = g @ step
        if not slope < 0:
            step, slope = -g, -(g @ g)
        # largest step that keeps every event intensity positive
        lam, dlam = model.intensities(x), model.X @ step
        neg = dlam < 0
        t = 1.0
        if np.any(neg):
            t = min(1.0, 0.99 * float(np.min(-lam[neg] / dlam[neg])))
        while True:
            x_new = x + t * step
            f_new = model.neg_loglik(x_new)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-14:
                # no further decrease representable in double precision
                return NewtonResult(x, f, g, H, np.max(np.abs(g)) < 1e-6 * (1.0 + abs(f)), it, trace)
        x, f = x_new, f_new
        trace.append(f)
        g, H = model.grad_hess(x)
    return NewtonResult(x, f, g, H, False, max_iter, trace)


# ---------------------------------------------------------------------------
# Fit results


@dataclass(frozen=True)
class FitResult:
    target: str
    names: list[str]
    coef: np.ndarray
    std_errors: np.ndarray
    hessian: np.ndarray
    neg_loglik: float
    converged: bool
    iterations: int
    sigma_w_selected: Optional[float]
    design: DesignSpec
    impact_slices: dict
    n_events: int
    total_time: float
    sigma_w_profile: tuple = ()
    gradient_norm: float = 0.0
    objective_trace: tuple = ()

    @property
    def beta_j(self) -> float:
        return float(self.coef[0])

    @property
    def beta_w(self) -> Optional[float]:
        ids = [k for k, n in enumerate(self.names) if n.startswith("smoothed[")]
        return float(self.coef[ids[0]]) if ids else None

    @property
    def impact_coeffs(self) -> np.ndarray:
        parts = [self.coef[slice(*sl)] for sl in self.impact_slices.values()]
        return np.concatenate(parts) if parts else np.zeros(0)

    @property
    def covariance(self) -> np.ndarray:
        try:
            return np.linalg.inv(self.hessian)
        except np.linalg.LinAlgError:
            return np.linalg.pinv(self.hessian)

    def impact(self, source: Optional[str] = None) -> np.ndarray:
        return self.coef[self._slice(source)]

    def impact_se(self, source: Optional[str] = None) -> np.ndarray:
        return self.std_errors[self._slice(source)]

    def _slice(self, source):
        if source is None:
            source = next(iter(self.impact_slices))
        start, stop = self.impact_slices[source]
        return slice(start, stop)

    @property
    def amplitude(self) -> float:
        """Coefficient of the first impact basis (the square-window amplitude)."""
        return float(self.impact()[0])

    @property
    def amplitude_se(self) -> float:
        return float(self.impact_se()[0])

    @property
    def loglik(self) -> float:
        return -self.neg_loglik

    def impact_curve(self, source: Optional[str] = None, lags=None, level: float = 0.95):
        """Fitted impact function with pointwise normal confidence band.

        Returns (lags, value, lo, hi).
        """
        from scipy.stats import norm

        if source is None:
            source = next(iter(self.impact_slices))
        basis = dict(self.design.sources)[source]
        sl = self._slice(source)
        if isinstance(basis, SquareBasis):
            support = basis.width
            lags = np.linspace(0, support, 31) if lags is None else np.asarray(lags, float)
            B = ((lags >= 0) & (lags <= support)).astype(float)[:, None]
        elif isinstance(basis, SplineBasis):
            support = basis.support
            lags = np.linspace(0, support, 101) if lags is None else np.asarray(lags, float)
            B = basis.basis().evaluate(lags)
        else:
            lags = np.linspace(0, 5 / basis.gamma, 101) if lags is None else np.asarray(lags, float)
            B = np.where(lags >= 0, np.exp(-basis.gamma * lags), 0.0)[:, None]
        cov = self.covariance[sl, sl]
        value = B @ self.coef[sl]
        se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", B, cov, B), 0.0))
        z = norm.ppf(0.5 + level / 2)
        return lags, value, value - z * se, value + z * se

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "names": self.names,
            "coef": self.coef.tolist(),
            "beta_j": self.beta_j,
            "beta_w": self.beta_w,
            "sigma_w_selected": self.sigma_w_selected,
            "impact_coeffs": self.impact_coeffs.tolist(),
            "impact_slices": {k: list(v) for k, v in self.impact_slices.items()},
            "std_errors": self.std_errors.tolist(),
            "hessian": self.hessian.tolist(),
            "neg_loglik": self.neg_loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "n_events": self.n_events,
            "total_time": self.total_time,
            "sigma_w_profile": [list(p) for p in self.sigma_w_profile],
            "design": self.design.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class FitFailure:
    """Placeholder for a pair whose fit raised, so other pairs still complete."""

    target: str
    source: str
    error: str


def write_impact_csv(fit: FitResult, path, source: Optional[str] = None, lags=None):
    lags, value, lo, hi = fit.impact_curve(source, lags)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag", "value", "ci_lo", "ci_hi"])
        for row in zip(lags, value, lo, hi):
            w.writerow([repr(float(x)) for x in row])


# ---------------------------------------------------------------------------
# Assembling columns for a dataset


class DesignData:
    """Column blocks of a design bound to a dataset; smoothed columns are rebuilt per width."""

    def __init__(self, design: DesignSpec, data: TrialSet):
        if design.target not in data.processes:
            raise KeyError(f"unknown target process {design.target!r}")
        for s, _ in design.sources:
            if s not in data.processes:
                raise KeyError(f"unknown source process {s!r}")
        self.design, self.data = design, data
        self.T = data.trial_horizon
        self.q = data.stacked(design.target)
        self._stacked = {}
        self.fixed_blocks = [D.ConstantBlock(data.trial_count, self.T)]
        self.impact_slices = {}
        col = 1
        impact_blocks = []
        for s, b in design.sources:
            src = self._src(s)
            label = f"{s}->{design.target}"
            if isinstance(b, SquareBasis):
                blk = D.SquareBlock(src, b.width, label)
            elif isinstance(b, SplineBasis):
                blk = D.SplineBlock(src, b.basis(), label)
            elif isinstance(b, ExponentialBasis):
                blk = D.ExponentialBlock(src, b.gamma, label)
            else:
                raise TypeError(f"unsupported impact basis {b!r}")
            if design.mean_center_bases:
                blk = D.Centered(blk)
            impact_blocks.append((s, blk))
        for cov in design.covariates:
            self.fixed_blocks.append(D.TabulatedBlock(cov.grid, cov.values, self.T, cov.name))
        self.n_fixed_pre = len(self.fixed_blocks)
        self.nuisance_ids = design.nuisance_ids()
        n_pre = sum(len(b.names) for b in self.fixed_blocks) + len(self.nuisance_ids)
        col = n_pre
        for s, blk in impact_blocks:
            self.impact_slices[s] = (col, col + len(blk.names))
            col += len(blk.names)
        self.impact_blocks = [blk for _, blk in impact_blocks]
        self._fixed_X = np.hstack([b.values(self.q) for b in self.fixed_blocks])
        self._fixed_c = np.concatenate([b.integrals() for b in self.fixed_blocks])
        if self.impact_blocks:
            self._impact_X = np.hstack([b.values(self.q) for b in self.impact_blocks])
            self._impact_c = np.concatenate([b.integrals() for b in self.impact_blocks])
        else:
            self._impact_X = np.zeros((self.q.times.size, 0))
            self._impact_c = np.zeros(0)

    def _src(self, pid) -> Stacked:
        if pid not in self._stacked:
            self._stacked[pid] = self.data.stacked(pid)
        return self._stacked[pid]

    def nuisance_blocks(self, sigma: Optional[float]):
        blocks = []
        for s in self.nuisance_ids:
            blk = D.SmoothedBlock(self._src(s), sigma, s)
            blocks.append(D.Centered(blk) if self.design.mean_center_bases else blk)
        return blocks

    def blocks(self, sigma: Optional[float]):
        return self.fixed_blocks + self.nuisance_blocks(sigma) + self.impact_blocks

    def model(self, sigma: Optional[float]) -> LinearModel:
        nb = self.nuisance_blocks(sigma)
        Xn = [b.values(self.q) for b in nb]
        cn = [b.integrals() for b in nb]
        X = np.hstack([self._fixed_X, *Xn, self._impact_X])
        c = np.concatenate([self._fixed_c, *cn, self._impact_c])
        names = [n for b in self.fixed_blocks + nb + self.impact_blocks for n in b.names]
        return LinearModel(X, c, names)

    def initial(self, n_params: int) -> np.ndarray:
        n = self.q.times.size
        if n == 0:
            raise ValueError(f"target process {self.design.target!r} has no events")
        x0 = np.zeros(n_params)
        x0[0] = n / (self.data.trial_count * self.T)
        return x0


def _sigma_of(design: DesignSpec) -> Optional[float]:
    if not design.nuisance_ids():
        return None
    if design.is_grid:
        raise ValueError("design has a sigma_w grid; use fit_modified_mle or pass a fixed width")
    return design.sigma_w


def _result(dd: DesignData, model: LinearModel, res: NewtonResult, sigma, profile=()) -> FitResult:
    try:
        cov = np.linalg.inv(res.hess)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(res.hess)
    se = np.sqrt(np.where(np.diag(cov) > 0, np.diag(cov), np.nan))
    design = dd.design.fixed(sigma) if sigma is not None else dd.design
    return FitResult(
        target=dd.design.target, names=model.names, coef=res.x, std_errors=se, hessian=res.hess,
        neg_loglik=res.fun, converged=res.converged, iterations=res.iterations,
        sigma_w_selected=sigma, design=design, impact_slices=dict(dd.impact_slices),
        n_events=int(dd.q.times.size), total_time=dd.data.total_time(), sigma_w_profile=tuple(profile),
        gradient_norm=float(np.max(np.abs(res.grad))) if res.grad.size else 0.0,
        objective_trace=tuple(res.trace))


# ---------------------------------------------------------------------------
# Public operations


def neg_loglik(design: DesignSpec, params, data: TrialSet) -> float:
    """Negative log-likelihood at ``params`` (+inf where an event intensity is not positive)."""
    return DesignData(design, data).model(_sigma_of(design)).neg_loglik(np.asarray(params, float))


def loglik_grad_hessian(design: DesignSpec, params, data: TrialSet):
    """Gradient and Hessian of the negative log-likelihood."""
    return DesignData(design, data).model(_sigma_of(design)).grad_hess(np.asarray(params, float))


def fit_fixed_sigma(design: DesignSpec, data: TrialSet, init=None, *, _dd: DesignData | None = None) -> FitResult:
    """Newton fit at a fixed smoothing width (or with no nuisance column at all)."""
    dd = _dd or DesignData(design, data)
    sigma = _sigma_of(design)
    model = dd.model(sigma)
    x0 = dd.initial(len(model.names)) if init is None else np.asarray(init, float)
    if init is not None and not np.isfinite(model.neg_loglik(x0)):
        x0 = dd.initial(len(model.names))
    res = newton_minimize(model, x0)
    return _result(dd, model, res, sigma)


def _profile_dsigma(dd: DesignData, sigma: float, coef: np.ndarray) -> float:
    """Derivative of the negative log-likelihood in sigma_w at fixed coefficients."""
    model = dd.model(sigma)
    lam = model.intensities(coef)
    n_fixed = dd._fixed_X.shape[1]
    total = 0.0
    for k, blk in enumerate(dd.nuisance_blocks(sigma)):
        inner = blk.inner if isinstance(blk, D.Centered) else blk
        b = coef[n_fixed + k]
        dv = inner.dvalues_dsigma(dd.q)[:, 0]
        total += -b * np.sum(dv / lam) + b * inner.dintegral_dsigma()
    return float(total)


def fit_modified_mle(design: DesignSpec, data: TrialSet, refine: bool = False) -> FitResult:
    """Fit over every sigma_w in the design grid and keep the most likely width.

    Ties go to the largest width.  With ``refine`` the best grid width is
    polished by root-finding the profile derivative between its neighbours.
    """
    if not design.nuisance_ids():
        return fit_fixed_sigma(design, data)
    dd = DesignData(design, data)
    fits, profile = [], []
    init = None
    for s in design.grid:
        try:
            fit = fit_fixed_sigma(design.fixed(s), data, init=init, _dd=dd)
        except ValueError:
            continue
        fits.append(fit)
        profile.append((s, fit.loglik))
        init = fit.coef
    if not fits:
        raise ValueError("every sigma_w grid point was infeasible")
    lls = np.array([p[1] for p in profile])
    best_ll = lls.max()
    # ties (within floating-point noise) go to the largest width
    best = int(np.flatnonzero(lls >= best_ll - 1e-9 * max(1.0, abs(best_ll)))[-1])
    fit = fits[best]
    if refine and 0 < best < len(fits) - 1:
        fit = _refine_sigma(dd, fits, best, design, data) or fit
    return replace(fit, sigma_w_profile=tuple(profile))


def _refine_sigma(dd, fits, best, design, data) -> Optional[FitResult]:
    cache = {}

    def deriv(s):
        f = fit_fixed_sigma(design.fixed(s), data, init=fits[best].coef, _dd=dd)
        cache[s] = f
        return _profile_dsigma(dd, s, f.coef)

    lo, hi = fits[best - 1].sigma_w_selected, fits[best + 1].sigma_w_selected
    mid = fits[best].sigma_w_selected
    d_mid = deriv(mid)
    for a, b in ((lo, mid), (mid, hi)):
        try:
            da = deriv(a) if a != mid else d_mid
            db = deriv(b) if b != mid else d_mid
            if np.sign(da) != np.sign(db):
                s_star = brentq(deriv, a, b, xtol=1e-6)
                cand = cache.get(s_star) or fit_fixed_sigma(design.fixed(s_star), data, _dd=dd)
                if cand.neg_loglik <= fits[best].neg_loglik:
                    return cand
        except ValueError:
            continue
    return None


def fit_standard_mhp(design: DesignSpec, data: TrialSet) -> FitResult:
    """Baseline Hawkes fit: constant plus impact bases, no nuisance column."""
    return fit_fixed_sigma(replace(design, include_smoothed_nuisance=False, nuisance_sources=None), data)


def fit_nonparametric(design: DesignSpec, data: TrialSet, refine: bool = False) -> FitResult:
    """Fit with B-spline impact bases; grid search on sigma_w when the design has a grid."""
    if not any(isinstance(b, SplineBasis) for _, b in design.sources):
        raise ValueError("nonparametric fit needs at least one SplineBasis impact")
    if design.is_grid and design.nuisance_ids():
        return fit_modified_mle(design, data, refine=refine)
    return fit_fixed_sigma(design, data)


def fit_exponential_gamma(design: DesignSpec, data: TrialSet, gamma_grid: Sequence[float]) -> FitResult:
    """Choose the exponential-kernel rate by profile likelihood over ``gamma_grid``,
    then polish with the analytic gamma derivative (single exponential source)."""
    (src, basis), = [(s, b) for s, b in design.sources if isinstance(b, ExponentialBasis)]
    sigma = None if not design.nuisance_ids() else design.sigma_w
    if isinstance(sigma, tuple):
        raise ValueError("fix sigma_w before optimizing gamma")

    def with_gamma(g):
        srcs = tuple((s, ExponentialBasis(g) if s == src else b) for s, b in design.sources)
        return replace(design, sources=srcs)

    def fit_at(g):
        return fit_fixed_sigma(with_gamma(g), data)

    fits = [fit_at(g) for g in gamma_grid]
    best = int(np.argmax([f.loglik for f in fits]))

    def dgamma(g):
        f = fit_at(g)
        dd = DesignData(with_gamma(g), data)
        lo, hi = dd.impact_slices[src]
        blk = dd.impact_blocks[list(dd.impact_slices).index(src)]
        blk = blk.inner if isinstance(blk, D.Centered) else blk
        lam = dd.model(sigma).intensities(f.coef)
        a = f.coef[lo]
        return float(a * np.sum(-blk.dvalues_dgamma(dd.q)[:, 0] / lam) + a * blk.dintegral_dgamma())

    fit = fits[best]
    for a, b in ((best - 1, best), (best, best + 1)):
        if 0 <= a and b < len(fits):
            ga, gb = gamma_grid[a], gamma_grid[b]
            try:
                if np.sign(dgamma(ga)) != np.sign(dgamma(gb)):
                    cand = fit_at(brentq(dgamma, ga, gb, xtol=1e-8))
                    if cand.neg_loglik <= fit.neg_loglik:
                        fit = cand
            except ValueError:
                pass
    return fit


def fit_multivariate_pairwise(data: TrialSet, impact: ImpactBasis, sigma_w=DEFAULT_GRID,
                              nuisance: str = "source", refine: bool = False,
                              pairs: Optional[Sequence[tuple[str, str]]] = None) -> dict:
    """Bivariate modified MLE for every ordered pair (source, target).

    ``nuisance="source"`` smooths only the pair's source; ``"all"`` adds the
    smoothed trains of every other process.  A pair that fails is reported as a
    FitFailure instead of aborting the others.
    """
    ids = data.process_ids
    if len(ids) < 2:
        raise ValueError("need at least two processes")
    if nuisance not in ("source", "all"):
        raise ValueError("nuisance must be 'source' or 'all'")
    out = {}
    todo = pairs if pairs is not None else [(i, j) for j in ids for i in ids if i != j]
    for i, j in todo:
        nz = None if nuisance == "source" else tuple(p for p in ids if p != j)
        design = DesignSpec.pair(i, j, impact, sigma_w=sigma_w, nuisance_sources=nz)
        try:
            if design.is_grid:
                out[(i, j)] = fit_modified_mle(design, data, refine=refine)
            else:
                out[(i, j)] = fit_fixed_sigma(design, data)
        except Exception as exc:  # noqa: BLE001 - report and continue with other pairs
            warnings.warn(f"fit {i}->{j} failed: {exc}")
            out[(i, j)] = FitFailure(j, i, f"{type(exc).__name__}: {exc}")
    return out


# ---------------------------------------------------------------------------
# Fitted intensity as a function of time (used by diagnostics and re-simulation)


class FittedIntensity:
    """Evaluate a fitted linear intensity and its running integral at arbitrary times."""

    def __init__(self, fit: FitResult, data: TrialSet):
        self.fit = fit
        self.dd = DesignData(fit.design, data)
        self.blocks = self.dd.blocks(fit.sigma_w_selected)

    def _query(self, times_per_trial):
        arrays = [np.asarray(t, float) for t in times_per_trial]
        orders = [np.argsort(a, kind="stable") for a in arrays]
        return Stacked.from_arrays([a[o] for a, o in zip(arrays, orders)], self.dd.T), orders

    @staticmethod
    def _split(values, q: Stacked, orders) -> list[np.ndarray]:
        out = []
        for r, o in enumerate(orders):
            v = np.empty(o.size)
            v[o] = values[q.offsets[r]:q.offsets[r + 1]]
            out.append(v)
        return out

    def evaluate(self, times_per_trial) -> list[np.ndarray]:
        """Fitted intensity at the given times (any order) for each trial."""
        q, orders = self._query(times_per_trial)
        X = np.hstack([b.values(q) for b in self.blocks])
        return self._split(X @ self.fit.coef, q, orders)

    def cumulative(self, times_per_trial) -> list[np.ndarray]:
        """Integral of the fitted intensity from 0 to each given time."""
        q, orders = self._query(times_per_trial)
        C = np.hstack([b.cumulative(q) for b in self.blocks])
        return self._split(C @ self.fit.coef, q, orders)
