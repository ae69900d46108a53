"""Tests and decisions built on fitted models.

Wald tests for impact amplitudes, ROC summaries of p-value samples,
time-rescaling goodness of fit, Bonferroni network extraction, conditional
re-simulation from a fitted intensity, and a random-walk Metropolis sampler
for the flat-prior posterior.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .core import EventSequence, Stacked, TrialSet
from .estimate import (DesignData, DesignSpec, FitFailure, FitResult, FittedIntensity, fit_fixed_sigma,
                       fit_modified_mle)

LEVELS = (0.05, 0.01, 0.001)


@dataclass(frozen=True)
class TestOutcome:
    statistic: float
    p_value: float
    method: Literal["wald", "ccg_mc", "ks_rescaling"]
    reject_at: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    @classmethod
    def from_p(cls, statistic, p, method, levels=LEVELS):
        p = float(min(max(p, 0.0), 1.0))
        return cls(float(statistic), p, method, {lv: p < lv for lv in levels})


# ---------------------------------------------------------------------------
# Wald test


def wald_test(fit: FitResult, coeff_index: Optional[int] = None) -> TestOutcome:
    """Two-sided test of a zero coefficient (default: the first impact coefficient)."""
    if not fit.converged:
        raise ValueError("Wald test needs a converged fit")
    k = fit.impact_slices[next(iter(fit.impact_slices))][0] if coeff_index is None else coeff_index
    se = fit.std_errors[k]
    if not se > 0:
        raise ValueError("standard error must be positive")
    z = fit.coef[k] / se
    return TestOutcome.from_p(z, 2 * stats.norm.sf(abs(z)), "wald")


# ---------------------------------------------------------------------------
# ROC


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "fpr", "tpr"])
            for row in zip(self.thresholds, self.fpr, self.tpr):
                w.writerow([repr(float(x)) for x in row])


def roc_analysis(p_values_null: Sequence[float], p_values_alt: Sequence[float]) -> RocCurve:
    """ROC of 'reject when p <= threshold', sweeping the threshold over observed p-values."""
    from sklearn.metrics import auc, roc_curve

    p0, p1 = np.asarray(p_values_null, float), np.asarray(p_values_alt, float)
    if p0.size == 0 or p1.size == 0:
        raise ValueError("both p-value samples must be non-empty")
    y = np.r_[np.zeros(p0.size), np.ones(p1.size)]
    score = -np.r_[p0, p1]
    fpr, tpr, thr = roc_curve(y, score, drop_intermediate=False)
    thr = np.where(np.isfinite(thr), -thr, 0.0)
    return RocCurve(fpr, tpr, thr, float(auc(fpr, tpr)))


# ---------------------------------------------------------------------------
# Time-rescaling goodness of fit


@dataclass(frozen=True)
class QQTable:
    model: np.ndarray
    empirical: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model_quantile", "empirical_quantile", "band_lo", "band_hi"])
            for row in zip(self.model, self.empirical, self.lo, self.hi):
                w.writerow([repr(float(x)) for x in row])


def rescaled_intervals(cumulative_at_events: Sequence[np.ndarray]) -> np.ndarray:
    """Integrated intensity between consecutive events, per trial, first partial interval dropped."""
    parts = [np.diff(np.asarray(c, float)) for c in cumulative_at_events]
    z = np.concatenate(parts) if parts else np.zeros(0)
    if np.any(z <= 0):
        raise ValueError("non-positive integrated intensity between consecutive events")
    return z


def ks_exponential(z: np.ndarray, band: float = 0.99):
    """KS test of z against Exp(1) plus a QQ table on the uniform scale with a KS band."""
    if z.size < 2:
        raise ValueError("need at least two rescaled intervals")
    res = stats.kstest(z, "expon")
    u = np.sort(-np.expm1(-z))
    n = u.size
    model = (np.arange(1, n + 1) - 0.5) / n
    half = stats.kstwo.ppf(band, n)
    qq = QQTable(model, u, np.clip(model - half, 0, 1), np.clip(model + half, 0, 1))
    return TestOutcome.from_p(res.statistic, res.pvalue, "ks_rescaling"), qq


def ks_rescaling_test(fit: FitResult, data: TrialSet, band: float = 0.99):
    """Time-rescaling KS test of a fitted target intensity on ``data``."""
    fi = FittedIntensity(fit, data)
    times = data.times(fit.target)
    cum = fi.cumulative(times)
    return ks_exponential(rescaled_intervals(cum), band)


def simulate_conditional(fit: FitResult, data: TrialSet, rng, max_iter: int = 100, tol: float = 1e-10) -> TrialSet:
    """Replace the target's events by a draw from the fitted intensity given the sources.

    Inverts the running integral of the fitted intensity at unit-exponential
    arrival times with bracketed Newton steps (bisection whenever a Newton
    step leaves the bracket).  Needs a design whose columns do not depend on
    the target's own history.
    """
    rng = np.random.default_rng(rng)
    design = fit.design
    if any(s == fit.target for s, _ in design.sources) or fit.target in design.nuisance_ids():
        raise ValueError("conditional simulation needs a design without self terms")
    T = data.trial_horizon
    fi = FittedIntensity(fit, data)
    totals = [c[0] for c in fi.cumulative([[T]] * data.trial_count)]
    arrivals = []
    for tot in totals:
        acc, s = [], 0.0
        while True:
            s += rng.exponential()
            if s > tot:
                break
            acc.append(s)
        arrivals.append(np.asarray(acc))
    target = np.concatenate(arrivals) if arrivals else np.zeros(0)
    trial = np.repeat(np.arange(len(arrivals)), [a.size for a in arrivals])
    lo, hi = np.zeros(target.size), np.full(target.size, T)
    x = target / np.asarray(totals)[trial] * T if target.size else target

    def per_trial(v, tr):
        return [v[tr == r] for r in range(data.trial_count)]

    def gather(lists, tr):
        out = np.empty(tr.size)
        for r, v in enumerate(lists):
            out[tr == r] = v
        return out

    active = np.arange(target.size)
    for _ in range(max_iter):
        if active.size == 0:
            break
        xa, tr = x[active], trial[active]
        resid = gather(fi.cumulative(per_trial(xa, tr)), tr) - target[active]
        done = np.abs(resid) < tol
        below = resid < 0
        lo[active] = np.where(below, xa, lo[active])
        hi[active] = np.where(below, hi[active], xa)
        lam = gather(fi.evaluate(per_trial(xa, tr)), tr)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = xa - resid / lam
        inside = np.isfinite(step) & (step > lo[active]) & (step < hi[active])
        x[active] = np.where(done, xa, np.where(inside, step, (lo[active] + hi[active]) / 2))
        active = active[~done]
    new = tuple(EventSequence(np.unique(np.clip(v, 0, T)), T) for v in per_trial(x, trial))
    procs = dict(data.processes)
    procs[fit.target] = new
    return TrialSet(procs, data.trial_count, T)


# ---------------------------------------------------------------------------
# Network extraction


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    alpha_hat: float
    se: float
    p_value: float
    sign: int
    retained: bool


@dataclass(frozen=True)
class NetworkEdges:
    edges: tuple[Edge, ...]
    nodes: tuple[str, ...]
    correction: str
    level: float
    threshold: float

    @property
    def retained(self) -> list[Edge]:
        return [e for e in self.edges if e.retained]

    def degrees(self) -> dict:
        out = {n: {"out_pos": 0, "out_neg": 0, "in_pos": 0, "in_neg": 0} for n in self.nodes}
        for e in self.retained:
            tag = "pos" if e.sign > 0 else "neg"
            out[e.source][f"out_{tag}"] += 1
            out[e.target][f"in_{tag}"] += 1
        return out

    def to_csv(self, path, retained_only: bool = True):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["source", "target", "alpha_hat", "se", "p", "sign"])
            for e in (self.retained if retained_only else self.edges):
                w.writerow([e.source, e.target, repr(e.alpha_hat), repr(e.se), repr(e.p_value), e.sign])

    def to_graph(self) -> dict:
        return {"nodes": [{"id": n, **d} for n, d in self.degrees().items()],
                "edges": [{"source": e.source, "target": e.target, "weight": e.alpha_hat, "se": e.se,
                           "p": e.p_value, "sign": e.sign} for e in self.retained],
                "correction": self.correction, "level": self.level, "threshold": self.threshold}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_graph(), fh, indent=2)


def extract_network(fits: Mapping[tuple[str, str], FitResult], level: float = 0.01,
                    correction: Literal["bonferroni", "none"] = "bonferroni") -> NetworkEdges:
    """Keep pairs whose Wald p-value beats level / (number of ordered pairs tested)."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    valid = {k: f for k, f in fits.items() if isinstance(f, FitResult)}
    m = max(len(valid), 1)
    thr = level / m if correction == "bonferroni" else level
    edges, nodes = [], []
    for (i, j), f in sorted(valid.items()):
        for n in (i, j):
            if n not in nodes:
                nodes.append(n)
        try:
            p = wald_test(f).p_value
        except ValueError:
            p = 1.0
        a = f.amplitude
        edges.append(Edge(i, j, a, f.amplitude_se, p, int(np.sign(a)), p < thr))
    return NetworkEdges(tuple(edges), tuple(nodes), correction, level, thr)


# ---------------------------------------------------------------------------
# Metropolis-Hastings


@dataclass(frozen=True)
class McmcChain:
    samples: np.ndarray
    names: list[str]
    acceptance_rate: float
    variant: Literal["sigma_w_random", "sigma_w_fixed"]
    sigma_acceptance_rate: Optional[float] = None

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, self.names.index(name)]

    def interval(self, name: str, level: float = 0.95):
        a = (1 - level) / 2
        return tuple(np.quantile(self.column(name), [a, 1 - a]))


def mh_sample(design: DesignSpec, data: TrialSet, variant: Literal["sigma_w_random", "sigma_w_fixed"] = "sigma_w_fixed",
              chain_length: int = 1000, proposal_scales=None, rng=None, *, thin: int = 1,
              proposal: Literal["diagonal", "hessian"] = "diagonal", sigma_step: float = 0.010,
              init_fit: Optional[FitResult] = None, init=None, burn_in: int = 0) -> McmcChain:
    """Random-walk Metropolis on the fitted coefficients (and optionally sigma_w) under flat priors.

    The chain starts at the maximum-likelihood point.  ``proposal="diagonal"``
    uses independent normal steps with ``proposal_scales`` (default 0.3 x the
    standard errors); ``"hessian"`` uses a correlated step with covariance
    (2.38^2 / d) times the inverse Hessian.  With ``variant="sigma_w_random"``
    every iteration first updates sigma_w (normal step ``sigma_step``, rejected
    outside (0, inf)) and then the coefficient block.  ``thin`` iterations are
    run per retained draw.
    """
    if chain_length < 100:
        raise ValueError("chain_length must be at least 100")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    rng = np.random.default_rng(rng)
    random_sigma = variant == "sigma_w_random"
    if variant not in ("sigma_w_random", "sigma_w_fixed"):
        raise ValueError("unknown variant")
    if random_sigma and not design.nuisance_ids():
        raise ValueError("sigma_w can only be sampled with a smoothed nuisance term")

    dd = DesignData(design if not design.is_grid else design.fixed(design.grid[0]), data)
    if init_fit is None and init is None:
        init_fit = fit_modified_mle(design, data) if design.is_grid else fit_fixed_sigma(design, data)
    if init_fit is not None:
        beta = init_fit.coef.copy()
        sigma = init_fit.sigma_w_selected
        names = list(init_fit.names)
        se = init_fit.std_errors
        hess = init_fit.hessian
    else:
        sigma = None if not design.nuisance_ids() else (design.grid[len(design.grid) // 2])
        model0 = dd.model(sigma)
        beta = np.asarray(init, float).copy()
        names = model0.names
        se, hess = None, None
    d = beta.size
    if proposal == "hessian":
        if hess is None:
            raise ValueError("hessian proposals need an initial fit")
        cov = np.linalg.inv(hess) * (2.38 ** 2 / d)
        chol = np.linalg.cholesky(cov)
    else:
        scales = 0.3 * se if proposal_scales is None else np.broadcast_to(np.asarray(proposal_scales, float), (d,))
        if scales is None or not np.all(np.isfinite(scales)) or np.any(np.asarray(scales) <= 0):
            raise ValueError("proposal scales must be positive and finite")
        chol = np.diag(scales)
    if random_sigma and not sigma_step > 0:
        raise ValueError("sigma_step must be positive")

    model = dd.model(sigma)
    nll = model.neg_loglik(beta)
    if not np.isfinite(nll):
        raise ValueError("initial point is infeasible")
    n_keep = chain_length
    out = np.empty((n_keep, d + (1 if random_sigma else 0)))
    acc = tries = sacc = stries = 0
    total_iter = burn_in + n_keep * thin
    kept = 0
    for it in range(total_iter):
        if random_sigma:
            s_new = sigma + sigma_step * rng.standard_normal()
            stries += 1
            if s_new > 0:
                m_new = dd.model(s_new)
                nll_new = m_new.neg_loglik(beta)
                if np.log(rng.random()) < nll - nll_new:
                    sigma, model, nll = s_new, m_new, nll_new
                    sacc += 1
        prop = beta + chol @ rng.standard_normal(d)
        nll_new = model.neg_loglik(prop)
        tries += 1
        if np.isfinite(nll_new) and np.log(rng.random()) < nll - nll_new:
            beta, nll = prop, nll_new
            acc += 1
        if it >= burn_in and (it - burn_in + 1) % thin == 0:
            out[kept, :d] = beta
            if random_sigma:
                out[kept, d] = sigma
            kept += 1
    all_names = names + (["sigma_w"] if random_sigma else [])
    return McmcChain(out, all_names, acc / tries, variant, (sacc / stries) if random_sigma else None)
