"""Thinning simulation of multivariate Hawkes processes with fluctuating backgrounds.

Intensity of process j in one trial:

    lambda_j(t) = max(alpha_j + f_j(t) + sum_i sum_{t_m < t} h_{i->j}(t - t_m), 0)

Backgrounds are random per trial; each trial gets its own RNG substreams derived
from (seed, trial, role), so changing the trial count never reshuffles earlier
trials.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.interpolate import BSpline, PPoly

from . import _thinning as _th
from .core import EventSequence, TrialSet, pad_knots

ROLE_BACKGROUND = 0
ROLE_THINNING = 1
LOOKAHEAD = 0.010
COX_MARGIN = 5.0


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class Constant(_Frozen):
    kind: Literal["constant"] = "constant"
    level: float


class Sinusoid(_Frozen):
    """A * sin(2 pi (t/period - phi_rnd - phase_lag)); phases are in periods."""

    kind: Literal["sinusoid"] = "sinusoid"
    amplitude: float
    period: float = Field(1.0, gt=0)
    phase_lag: float = 0.0
    randomize_phase: bool = True


class LinearCox(_Frozen):
    """Sum of unit-mass Gaussian bumps (width sigma_I) centred on a Poisson(rho) process."""

    kind: Literal["linear_cox"] = "linear_cox"
    rho: float = Field(ge=0)
    sigma_I: float = Field(gt=0)


class VaryingCox(_Frozen):
    """Like LinearCox but every bump draws its own width from Uniform(lo, hi)."""

    kind: Literal["varying_cox"] = "varying_cox"
    rho: float = Field(ge=0)
    sigma_I_range: tuple[float, float]

    @model_validator(mode="after")
    def _check_range(self):
        lo, hi = self.sigma_I_range
        if not 0 < lo <= hi:
            raise ValueError("sigma_I_range needs 0 < lo <= hi")
        return self


class Tabulated(_Frozen):
    """Deterministic background, linear interpolation between grid points."""

    kind: Literal["tabulated"] = "tabulated"
    t: tuple[float, ...]
    values: tuple[float, ...]

    @model_validator(mode="after")
    def _check_grid(self):
        if len(self.t) != len(self.values) or len(self.t) < 2:
            raise ValueError("tabulated background needs matching t/values of length >= 2")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("tabulated grid must be strictly increasing")
        return self


BackgroundSpec = Annotated[Union[Constant, Sinusoid, LinearCox, VaryingCox, Tabulated],
                           Field(discriminator="kind")]


class SquareImpact(_Frozen):
    kind: Literal["square"] = "square"
    amplitude: float
    width: float = Field(gt=0)

    @property
    def support(self) -> float:
        return self.width

    def __call__(self, tau):
        tau = np.asarray(tau, float)
        return np.where((tau >= 0) & (tau <= self.width), self.amplitude, 0.0)


class BSplineImpact(_Frozen):
    """Impact sum_k c_k B_k(tau) on the B-spline basis built from ``knots``."""

    kind: Literal["bspline"] = "bspline"
    knots: tuple[float, ...]
    coefficients: tuple[float, ...]
    degree: int = 3

    @model_validator(mode="after")
    def _check(self):
        padded = pad_knots(self.knots, self.degree)
        if len(self.coefficients) != padded.size - self.degree - 1:
            raise ValueError("coefficient count must equal len(knots) + degree - 1")
        if self.knots[0] != 0:
            raise ValueError("impact knots must start at lag 0")
        return self

    @property
    def support(self) -> float:
        return float(self.knots[-1])

    def spline(self) -> BSpline:
        return BSpline(pad_knots(self.knots, self.degree), np.asarray(self.coefficients), self.degree,
                       extrapolate=False)

    def __call__(self, tau):
        tau = np.asarray(tau, float)
        out = np.nan_to_num(self.spline()(tau))
        return np.where((tau >= 0) & (tau <= self.support), out, 0.0)


class ExponentialImpact(_Frozen):
    """amplitude * exp(-gamma tau); accepted in configs but unbounded support cannot be thinned."""

    kind: Literal["exponential"] = "exponential"
    amplitude: float
    gamma: float = Field(gt=0)

    @property
    def support(self) -> float:
        return float("inf")


ImpactSpec = Annotated[Union[SquareImpact, BSplineImpact, ExponentialImpact], Field(discriminator="kind")]


class Edge(_Frozen):
    source: str
    target: str
    impact: ImpactSpec


class NetworkSpec(_Frozen):
    """Full generative description of a repeated-trial dataset (JSON serializable)."""

    process_ids: tuple[str, ...]
    baselines: tuple[float, ...]
    backgrounds: tuple[Optional[BackgroundSpec], ...]
    shared_background: bool = True
    impacts: tuple[Edge, ...] = ()
    horizon: float = Field(gt=0)
    trial_count: int = Field(ge=0)
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check(self):
        n = len(self.process_ids)
        if len(set(self.process_ids)) != n:
            raise ValueError("process ids must be unique")
        if len(self.baselines) != n or len(self.backgrounds) != n:
            raise ValueError("baselines and backgrounds need one entry per process")
        if any(b < 0 for b in self.baselines):
            raise ValueError("baselines must be non-negative")
        ids = set(self.process_ids)
        seen = set()
        for e in self.impacts:
            if e.source not in ids or e.target not in ids:
                raise ValueError(f"impact {e.source}->{e.target} refers to an unknown process")
            if (e.source, e.target) in seen:
                raise ValueError(f"duplicate impact {e.source}->{e.target}")
            seen.add((e.source, e.target))
        return self

    def impact(self, source: str, target: str):
        for e in self.impacts:
            if e.source == source and e.target == target:
                return e.impact
        return None

    def with_updates(self, **kw) -> "NetworkSpec":
        data = self.model_dump()
        data.update(kw)
        return NetworkSpec.model_validate(data)


# ---------------------------------------------------------------------------
# Background realizations


@dataclass(frozen=True)
class RealizedBackground:
    """One trial's draw of a background function f(t)."""

    kind: str
    level: float = 0.0
    amplitude: float = 0.0
    period: float = 1.0
    phase: float = 0.0
    centers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    widths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    grid_t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    grid_v: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "constant":
            return np.full_like(t, self.level)
        if self.kind == "sinusoid":
            return self.amplitude * np.sin(2 * np.pi * (t / self.period - self.phase))
        if self.kind == "bumps":
            out = np.zeros(t.size)
            flat = t.reshape(-1)
            for lo in range(0, self.centers.size, 512):
                c = self.centers[lo:lo + 512]
                w = self.widths[lo:lo + 512]
                z = (flat[:, None] - c) / w
                out += (np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * w)).sum(axis=1)
            return out.reshape(t.shape)
        return np.interp(t, self.grid_t, self.grid_v)

    def tabulate(self, horizon: float, dt: float = 1e-3):
        """Values on the grid 0, dt, ..., horizon; returns (grid, values)."""
        grid = np.linspace(0.0, horizon, int(round(horizon / dt)) + 1)
        return grid, self(grid)


def sample_background(spec, horizon: float, rng: np.random.Generator) -> RealizedBackground:
    """Draw one realization of a background on [0, horizon]."""
    if spec is None:
        return RealizedBackground("constant", level=0.0)
    if isinstance(spec, Constant):
        return RealizedBackground("constant", level=spec.level)
    if isinstance(spec, Sinusoid):
        phi = rng.uniform() if spec.randomize_phase else 0.0
        return RealizedBackground("sinusoid", amplitude=spec.amplitude, period=spec.period,
                                  phase=phi + spec.phase_lag)
    if isinstance(spec, (LinearCox, VaryingCox)):
        width = spec.sigma_I if isinstance(spec, LinearCox) else spec.sigma_I_range[1]
        lo, hi = -COX_MARGIN * width, horizon + COX_MARGIN * width
        n = rng.poisson(spec.rho * (hi - lo))
        centers = np.sort(rng.uniform(lo, hi, n))
        if isinstance(spec, LinearCox):
            widths = np.full(n, spec.sigma_I)
        else:
            widths = rng.uniform(*spec.sigma_I_range, n)
        return RealizedBackground("bumps", centers=centers, widths=widths)
    if isinstance(spec, Tabulated):
        return RealizedBackground("table", grid_t=np.asarray(spec.t, float), grid_v=np.asarray(spec.values, float))
    raise TypeError(f"unknown background spec {spec!r}")


def normalized_dot(f_i, f_j, amplitude: float, horizon: float) -> float:
    """(1 / (T A^2)) * integral_0^T f_i f_j by the trapezoid rule.

    ``f_i`` and ``f_j`` are (grid, values) pairs on the same grid.
    """
    (ti, vi), (tj, vj) = f_i, f_j
    ti, tj = np.asarray(ti, float), np.asarray(tj, float)
    if ti.shape != tj.shape or not np.array_equal(ti, tj):
        raise ValueError("backgrounds must be tabulated on a common grid")
    return float(np.trapezoid(np.asarray(vi) * np.asarray(vj), ti) / (horizon * amplitude ** 2))


# ---------------------------------------------------------------------------
# Thinning


@dataclass(frozen=True)
class SimulationOutput:
    trials: TrialSet
    seed_used: int
    realized_backgrounds: Optional[list[dict[str, RealizedBackground]]] = None


def _trial_seed(seed: int, trial: int, role: int, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, trial, role, *extra])


def _impact_arrays(spec: NetworkSpec):
    index = {p: k for k, p in enumerate(spec.process_ids)}
    src, tgt, support, pos, deg, boff, brk, coff, coef = [], [], [], [], [], [0], [], [0], []
    for e in spec.impacts:
        imp = e.impact
        if isinstance(imp, SquareImpact):
            pp_x, pp_c, d, top = np.array([0.0, imp.width]), np.array([[imp.amplitude]]), 0, imp.amplitude
        elif isinstance(imp, BSplineImpact):
            pp = PPoly.from_spline(imp.spline())
            keep = (pp.x[:-1] >= 0) & (pp.x[1:] <= imp.support) & (np.diff(pp.x) > 0)
            starts = pp.x[:-1][keep]
            pp_x = np.append(starts, imp.support)
            pp_c = pp.c[:, keep]
            d = pp.c.shape[0] - 1
            top = max(imp.coefficients)
        else:
            raise ValueError(f"impact {e.source}->{e.target} has unbounded support; thinning needs bounded impacts")
        src.append(index[e.source])
        tgt.append(index[e.target])
        support.append(imp.support)
        pos.append(max(top, 0.0))
        deg.append(d)
        brk.extend(pp_x)
        boff.append(len(brk))
        coef.extend(pp_c.T.reshape(-1))
        coff.append(len(coef))
    i64 = lambda a: np.asarray(a, dtype=np.int64)
    f64 = lambda a: np.asarray(a, dtype=np.float64)
    return (i64(src), i64(tgt), f64(support), f64(pos), i64(deg), i64(boff), f64(brk), i64(coff[:-1] or [0]),
            f64(coef))


def _background_groups(spec: NetworkSpec, trial: int):
    """Realize backgrounds for one trial; identical shared draws collapse into one group."""
    realized, groups, bg_group = [], {}, []
    for k, (pid, bspec) in enumerate(zip(spec.process_ids, spec.backgrounds)):
        stream = _trial_seed(spec.seed, trial, ROLE_BACKGROUND) if spec.shared_background else \
            _trial_seed(spec.seed, trial, ROLE_BACKGROUND, k)
        key = (bspec.model_dump_json() if bspec is not None else "none") if spec.shared_background else k
        if key not in groups:
            groups[key] = len(realized)
            realized.append(sample_background(bspec, spec.horizon, np.random.default_rng(stream)))
        bg_group.append(groups[key])
    return realized, np.asarray(bg_group, dtype=np.int64)


def _pack_backgrounds(realized: list[RealizedBackground]):
    G = len(realized)
    kind = np.zeros(G, dtype=np.int64)
    scal = np.zeros((G, 3))
    b_off, t_off = [0], [0]
    centers, widths, tab_t, tab_v = [], [], [], []
    for g, rb in enumerate(realized):
        if rb.kind == "constant":
            kind[g] = _th.BG_CONSTANT
            scal[g, 0] = rb.level
        elif rb.kind == "sinusoid":
            kind[g] = _th.BG_SINUSOID
            scal[g] = (rb.amplitude, rb.period, rb.phase)
        elif rb.kind == "bumps":
            kind[g] = _th.BG_BUMPS
            scal[g, 0] = rb.widths.max() if rb.widths.size else 1.0
            centers.append(rb.centers)
            widths.append(rb.widths)
        else:
            kind[g] = _th.BG_TABLE
            tab_t.append(rb.grid_t)
            tab_v.append(rb.grid_v)
        b_off.append(b_off[-1] + (rb.centers.size if rb.kind == "bumps" else 0))
        t_off.append(t_off[-1] + (rb.grid_t.size if rb.kind == "table" else 0))
    cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0)
    return (kind, scal, np.asarray(b_off, np.int64), cat(centers), cat(widths), np.asarray(t_off, np.int64),
            cat(tab_t), cat(tab_v))


def _expected_capacity(spec: NetworkSpec) -> int:
    top = max(spec.baselines, default=0.0)
    for b in spec.backgrounds:
        if isinstance(b, (LinearCox, VaryingCox)):
            top += 3 * b.rho
        elif isinstance(b, Sinusoid):
            top += abs(b.amplitude)
        elif isinstance(b, Constant):
            top += max(b.level, 0.0)
        elif isinstance(b, Tabulated):
            top += max(max(b.values), 0.0)
    return int(2 * top * spec.horizon) + 64


def thinning_simulate(spec: NetworkSpec, seed: Optional[int] = None, keep_backgrounds: bool = False,
                      trials: Optional[range] = None) -> SimulationOutput:
    """Simulate every trial of ``spec`` by Ogata-style thinning.

    ``seed`` overrides ``spec.seed``.  ``trials`` restricts generation to a subset of
    trial indices (the result is identical to slicing a full run).
    """
    if seed is not None:
        spec = spec.with_updates(seed=int(seed))
    trial_idx = range(spec.trial_count) if trials is None else trials
    imp = _impact_arrays(spec)
    alpha = np.asarray(spec.baselines, dtype=np.float64)
    P = len(spec.process_ids)
    per_proc = [[] for _ in range(P)]
    backgrounds = [] if keep_backgrounds else None
    cap0 = _expected_capacity(spec)
    for r in trial_idx:
        realized, bg_group = _background_groups(spec, r)
        packed = _pack_backgrounds(realized)
        tseed = int(_trial_seed(spec.seed, r, ROLE_THINNING).generate_state(1, np.uint32)[0])
        cap = cap0
        while True:
            ev, counts, status = _th.simulate_trial(tseed, spec.horizon, LOOKAHEAD, alpha, bg_group, *packed,
                                                    *imp, cap)
            if status == 1:
                cap *= 2
                continue
            if status == 2:
                raise RuntimeError("thinning majorant violated; this is a bug")
            break
        for p in range(P):
            per_proc[p].append(EventSequence(ev[p, :counts[p]].copy(), spec.horizon))
        if keep_backgrounds:
            backgrounds.append({pid: realized[bg_group[k]] for k, pid in enumerate(spec.process_ids)})
    ts = TrialSet({pid: tuple(per_proc[k]) for k, pid in enumerate(spec.process_ids)}, len(trial_idx),
                  spec.horizon)
    return SimulationOutput(ts, spec.seed, backgrounds)


# ---------------------------------------------------------------------------
# Scenario presets

PRESETS = ("sinusoid", "linear_cox_basic", "full_connection", "varying_sigma", "fast_changing", "multivariate6")

# Mixed-sign six-node network for the multivariate scenario (amplitudes in spikes/s
# over a 30 ms square window): an excitatory ring, inhibitory skip-one links and
# excitatory links to the opposite node.  The remaining 12 ordered pairs are zero.
MULTIVARIATE6_EDGES = tuple(
    [(k, (k + 1) % 6, 2.0) for k in range(6)]
    + [(k, (k + 2) % 6, -2.0) for k in range(6)]
    + [(k, (k + 3) % 6, 2.0) for k in range(6)]
)


def _square(src, tgt, amp, width=0.03) -> Edge:
    return Edge(source=src, target=tgt, impact=SquareImpact(amplitude=amp, width=width))


def scenario_presets(name: str, **overrides) -> NetworkSpec:
    """Parameterizations of the simulation scenarios.

    Keyword overrides: ``phase_lag`` (sinusoid), ``sigma_I`` (linear_cox_basic,
    fast_changing), ``amplitude`` (cross impact of the bivariate presets),
    ``sigma_h`` (impact width), ``trial_count``, ``horizon`` and ``seed``.
    """
    trial_count = overrides.pop("trial_count", 200)
    horizon = overrides.pop("horizon", 5.0)
    seed = overrides.pop("seed", 0)
    sigma_h = overrides.pop("sigma_h", 0.03)
    amp = overrides.pop("amplitude", 2.0)
    common = dict(horizon=horizon, trial_count=trial_count, seed=seed)
    if name == "sinusoid":
        lag = overrides.pop("phase_lag", 0.0)
        bgs = (Sinusoid(amplitude=5.0, period=1.0, phase_lag=0.0), Sinusoid(amplitude=5.0, period=1.0, phase_lag=lag))
        spec = NetworkSpec(process_ids=("i", "j"), baselines=(30.0, 30.0), backgrounds=bgs,
                           impacts=(_square("i", "j", amp, sigma_h),), **common)
    elif name in ("linear_cox_basic", "fast_changing", "full_connection"):
        default_sigma = 0.02 if name == "fast_changing" else 0.1
        bg = LinearCox(rho=overrides.pop("rho", 30.0), sigma_I=overrides.pop("sigma_I", default_sigma))
        if name == "full_connection":
            edges = (_square("i", "j", -2.0, sigma_h), _square("j", "i", -2.0, sigma_h),
                     _square("i", "i", 1.0, sigma_h), _square("j", "j", 1.0, sigma_h))
        else:
            edges = (_square("i", "j", amp, sigma_h),)
        spec = NetworkSpec(process_ids=("i", "j"), baselines=(10.0, 10.0), backgrounds=(bg, bg),
                           impacts=edges, **common)
    elif name == "varying_sigma":
        bg = VaryingCox(rho=overrides.pop("rho", 30.0), sigma_I_range=overrides.pop("sigma_I_range", (0.08, 0.14)))
        spec = NetworkSpec(process_ids=("i", "j"), baselines=(10.0, 10.0), backgrounds=(bg, bg),
                           impacts=(_square("i", "j", amp, sigma_h),), **common)
    elif name == "multivariate6":
        ids = tuple(str(k) for k in range(6))
        bg = LinearCox(rho=overrides.pop("rho", 20.0), sigma_I=overrides.pop("sigma_I", 0.1))
        edges = tuple(_square(ids[a], ids[b], w, sigma_h) for a, b, w in MULTIVARIATE6_EDGES)
        spec = NetworkSpec(process_ids=ids, baselines=(10.0,) * 6, backgrounds=(bg,) * 6, impacts=edges, **common)
    else:
        raise ValueError(f"unknown scenario {name!r}; choose one of {', '.join(PRESETS)}")
    if overrides:
        raise TypeError(f"unused overrides for {name}: {sorted(overrides)}")
    return spec
