"""Replicated simulation studies shared by the command line and the acceptance tests.

Every harness draws replicate ``k`` from the seed ``SeedSequence([seed, k])``
so results do not depend on worker count or scheduling, and returns a dict of
``Table`` objects plus a ``summary`` dict of headline numbers.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .ccg import CcgConfig, mc_null_inference
from .estimate import (DEFAULT_GRID, DesignData, DesignSpec, FitResult, SquareBasis, fit_fixed_sigma,
                       fit_modified_mle, fit_multivariate_pairwise, fit_standard_mhp)
from .inference import extract_network, roc_analysis, wald_test
from .io import Table
from .simulate import MULTIVARIATE6_EDGES, normalized_dot, scenario_presets, thinning_simulate
from .theory import CoxTheoryParams, bias_approx, bias_hawkes

EXPERIMENTS = ("sinusoid_bias", "sigma_w_sweep", "full_connection", "multivariate6", "pvalue_uniformity", "roc")


def replicate_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(k)]).generate_state(1, np.uint32)[0])


def _map(fn: Callable, args: Sequence, jobs: int = 1) -> list:
    """Ordered map, optionally over a process pool; results are reduced by index."""
    if jobs <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, args))


def _mean_sd(x) -> tuple[float, float]:
    x = np.asarray(x, float)
    return float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0


# ---------------------------------------------------------------------------
# Sinusoid background: bias against the background overlap


def _sinusoid_rep(args):
    lag, k, seed, trials, grid, sigma_h, amplitude = args
    spec = scenario_presets("sinusoid", phase_lag=lag, trial_count=trials, sigma_h=sigma_h, amplitude=amplitude)
    data = thinning_simulate(spec, seed=replicate_seed(seed, k)).trials
    design = DesignSpec.pair("i", "j", SquareBasis(sigma_h), sigma_w=grid)
    ours = fit_modified_mle(design, data)
    std = fit_standard_mhp(design, data)
    return ours.amplitude, std.amplitude, ours.sigma_w_selected


def sinusoid_overlap(phase_lag: float, horizon: float = 5.0, amplitude: float = 5.0) -> float:
    """Normalized dot product of the two sinusoid backgrounds (one trial, common phase)."""
    spec = scenario_presets("sinusoid", phase_lag=phase_lag, trial_count=1, horizon=horizon)
    out = thinning_simulate(spec, seed=0, keep_backgrounds=True)
    bg = out.realized_backgrounds[0]
    return normalized_dot(bg["i"].tabulate(horizon), bg["j"].tabulate(horizon), amplitude, horizon)


def sinusoid_bias(reps: int = 20, phase_lags=(0.0, 0.125, 0.25, 0.375, 0.5), trials: int = 200, seed: int = 0,
                  sigma_w=DEFAULT_GRID, sigma_h: float = 0.03, amplitude: float = 2.0, jobs: int = 1) -> dict:
    """Bias of both estimators as the phase lag between the two backgrounds is swept."""
    args = [(lag, k, seed, trials, sigma_w, sigma_h, amplitude) for lag in phase_lags for k in range(reps)]
    res = _map(_sinusoid_rep, args, jobs)
    records, summary_rows = [], []
    for (lag, k, *_), (a_ours, a_std, sw) in zip(args, res):
        records.append({"phase_lag": lag, "rep": k, "alpha_modified": a_ours, "alpha_standard": a_std,
                        "sigma_w_selected": sw})
    for lag in phase_lags:
        ours = [r["alpha_modified"] - amplitude for r in records if r["phase_lag"] == lag]
        std = [r["alpha_standard"] - amplitude for r in records if r["phase_lag"] == lag]
        (bo, so), (bs, ss) = _mean_sd(ours), _mean_sd(std)
        summary_rows.append({"phase_lag": lag, "dot_product": sinusoid_overlap(lag), "bias_modified": bo,
                             "sd_modified": so, "bias_standard": bs, "sd_standard": ss})
    dots = np.array([r["dot_product"] for r in summary_rows])
    bstd = np.array([r["bias_standard"] for r in summary_rows])
    fit = stats.linregress(dots, bstd)
    summary = {"r_squared_standard": float(fit.rvalue ** 2), "slope_standard": float(fit.slope),
               "max_abs_bias_modified": float(max(abs(r["bias_modified"]) for r in summary_rows))}
    return {"replicates": Table.from_records(records), "summary_table": Table.from_records(summary_rows),
            "summary": summary}


# ---------------------------------------------------------------------------
# Sweep of the smoothing width on the linear Cox scenario


def _sweep_rep(args):
    k, seed, trials, points, grid, sigma_h = args
    spec = scenario_presets("linear_cox_basic", trial_count=trials, sigma_h=sigma_h)
    data = thinning_simulate(spec, seed=replicate_seed(seed, k)).trials
    base = DesignSpec.pair("i", "j", SquareBasis(sigma_h), sigma_w=grid)
    dd = DesignData(base.fixed(grid[0]), data)
    alphas, prof = [], []
    init = None
    for s in points:
        f = fit_fixed_sigma(base.fixed(s), data, init=init, _dd=dd)
        init = f.coef
        alphas.append(f.amplitude)
    init = None
    for s in grid:
        f = fit_fixed_sigma(base.fixed(s), data, init=init, _dd=dd)
        init = f.coef
        prof.append(f.loglik)
    std = fit_standard_mhp(base, data)
    return np.array(alphas), np.array(prof), std.amplitude


def sigma_w_sweep(reps: int = 30, points: Optional[Sequence[float]] = None, trials: int = 200, seed: int = 0,
                  grid=DEFAULT_GRID, sigma_h: float = 0.03, jobs: int = 1) -> dict:
    """Empirical bias and profile likelihood across smoothing widths, with the theory overlay."""
    points = tuple(np.geomspace(0.005, 0.5, 8) if points is None else points)
    res = _map(_sweep_rep, [(k, seed, trials, points, tuple(grid), sigma_h) for k in range(reps)], jobs)
    A = np.array([r[0] for r in res])
    P = np.array([r[1] for r in res])
    std = np.array([r[2] for r in res])
    p = CoxTheoryParams.linear_cox_basic(T=trials * 5.0)
    rows = []
    for m, s in enumerate(points):
        b = A[:, m] - p.alpha_ij
        rows.append({"sigma_w_ms": s * 1e3, "bias": float(b.mean()), "sd": float(b.std(ddof=1)) if reps > 1 else 0.0,
                     "mc_se": float(b.std(ddof=1) / np.sqrt(reps)) if reps > 1 else float("nan"),
                     "bias_theory": bias_approx(p, s)})
    mean_prof = P.mean(axis=0)
    prof_rows = [{"sigma_w_ms": s * 1e3, "mean_loglik": float(v), "dloglik": float(v - mean_prof[0])}
                 for s, v in zip(grid, mean_prof)]
    selected = [grid[int(np.argmax(r))] for r in P]
    summary = {"selected_sigma_w": float(grid[int(np.argmax(mean_prof))]),
               "median_selected_sigma_w": float(np.median(selected)),
               "bias_standard": float(std.mean() - p.alpha_ij), "bias_hawkes_theory": bias_hawkes(p),
               "max_z": float(max(abs(r["bias"] - r["bias_theory"]) / r["mc_se"] for r in rows)) if reps > 1
               else float("nan")}
    return {"bias_curve": Table.from_records(rows), "likelihood_profile": Table.from_records(prof_rows),
            "summary": summary}


# ---------------------------------------------------------------------------
# Two processes with cross and self connections


def _full_rep(args):
    k, seed, trials, grid, sigma_h = args
    spec = scenario_presets("full_connection", trial_count=trials, sigma_h=sigma_h)
    data = thinning_simulate(spec, seed=replicate_seed(seed, k)).trials
    out = {}
    for tgt, src in (("j", "i"), ("i", "j")):
        design = DesignSpec(tgt, ((src, SquareBasis(sigma_h)), (tgt, SquareBasis(sigma_h))), sigma_w=grid)
        ours = fit_modified_mle(design, data)
        std = fit_standard_mhp(design, data)
        for name, f in (("modified", ours), ("standard", std)):
            out[(name, src, tgt)] = float(f.impact(src)[0])
            out[(name, tgt, tgt)] = float(f.impact(tgt)[0])
    return out


def full_connection(reps: int = 20, trials: int = 200, seed: int = 0, grid=DEFAULT_GRID, sigma_h: float = 0.03,
                    jobs: int = 1) -> dict:
    """Cross and self impact estimates for both estimators on the fully connected pair."""
    truth = {("i", "j"): -2.0, ("j", "i"): -2.0, ("i", "i"): 1.0, ("j", "j"): 1.0}
    res = _map(_full_rep, [(k, seed, trials, tuple(grid), sigma_h) for k in range(reps)], jobs)
    rows, summary = [], {}
    for method in ("modified", "standard"):
        for (s, t), a in truth.items():
            est = np.array([r[(method, s, t)] for r in res])
            rows.append({"method": method, "edge": f"{s}->{t}", "true": a, "mean": float(est.mean()),
                         "sd": float(est.std(ddof=1)) if reps > 1 else 0.0,
                         "mae": float(np.mean(np.abs(est - a)))})
        cross = [r["mae"] for r in rows if r["method"] == method and r["edge"] in ("i->j", "j->i")]
        summary[f"cross_mae_{method}"] = float(np.mean(cross))
    return {"summary_table": Table.from_records(rows), "summary": summary}


# ---------------------------------------------------------------------------
# Six-node network via pairwise reduction


def _mv6_rep(args):
    k, seed, trials, grid, sigma_h, zero = args
    kw = {"trial_count": trials, "sigma_h": sigma_h}
    spec = scenario_presets("multivariate6", **kw)
    if zero:
        spec = spec.with_updates(impacts=())
    data = thinning_simulate(spec, seed=replicate_seed(seed, k)).trials
    ours = fit_multivariate_pairwise(data, SquareBasis(sigma_h), sigma_w=grid)
    std = {}
    for (i, j) in ours:
        std[(i, j)] = fit_standard_mhp(DesignSpec.pair(i, j, SquareBasis(sigma_h), nuisance=False), data)
    net = extract_network(ours, level=0.01)
    return ({p: f.amplitude for p, f in ours.items()}, {p: f.amplitude for p, f in std.items()},
            [(e.source, e.target, e.sign) for e in net.retained])


def multivariate6(reps: int = 20, trials: int = 200, seed: int = 0, grid=DEFAULT_GRID, sigma_h: float = 0.03,
                  zero_impacts: bool = False, jobs: int = 1) -> dict:
    """Pairwise fits on the six-node network: bias, RMSE and Bonferroni edge recovery."""
    truth = {(str(a), str(b)): 0.0 for a in range(6) for b in range(6) if a != b}
    if not zero_impacts:
        for a, b, w in MULTIVARIATE6_EDGES:
            truth[(str(a), str(b))] = w
    res = _map(_mv6_rep, [(k, seed, trials, tuple(grid), sigma_h, zero_impacts) for k in range(reps)], jobs)
    rows = []
    for pair, a in sorted(truth.items()):
        for method, idx in (("modified", 0), ("standard", 1)):
            est = np.array([r[idx][pair] for r in res])
            rows.append({"method": method, "source": pair[0], "target": pair[1], "true": a,
                         "bias": float(est.mean() - a), "rmse": float(np.sqrt(np.mean((est - a) ** 2))),
                         "sd": float(est.std(ddof=1)) if reps > 1 else 0.0})
    summary = {}
    for method in ("modified", "standard"):
        sel = [r for r in rows if r["method"] == method]
        summary[f"mean_bias_{method}"] = float(np.mean([r["bias"] for r in sel]))
        summary[f"mean_abs_bias_{method}"] = float(np.mean([abs(r["bias"]) for r in sel]))
        summary[f"mean_rmse_{method}"] = float(np.mean([r["rmse"] for r in sel]))
    false_edges, sign_hits, n_true = 0, 0, 0
    for r in res:
        kept = {(s, t): sg for s, t, sg in r[2]}
        false_edges += sum(1 for p in kept if truth[p] == 0)
        for p, a in truth.items():
            if a != 0:
                n_true += 1
                sign_hits += int(kept.get(p, 0) == np.sign(a))
    summary["false_edges_per_rep"] = false_edges / reps
    summary["sign_recovery"] = sign_hits / n_true if n_true else float("nan")
    return {"pair_table": Table.from_records(rows), "summary": summary}


# ---------------------------------------------------------------------------
# Hypothesis tests: null p-values and ROC


def _pvalue_rep(args):
    k, seed, amplitude, trials, sigma_w, sigma_h, ccg_cfg = args
    spec = scenario_presets("linear_cox_basic", amplitude=amplitude, trial_count=trials, sigma_h=sigma_h)
    data = thinning_simulate(spec, seed=replicate_seed(seed, k)).trials
    design = DesignSpec.pair("i", "j", SquareBasis(sigma_h), sigma_w=sigma_w)
    ours = fit_modified_mle(design, data) if design.is_grid else fit_fixed_sigma(design, data)
    std = fit_standard_mhp(design, data)
    res = mc_null_inference(data.processes["i"], data.processes["j"], ccg_cfg,
                            rng=np.random.SeedSequence([seed, k, 1]))
    return wald_test(ours).p_value, wald_test(std).p_value, res.window_pvalue(0.0, sigma_h)


def pvalue_samples(reps: int = 100, amplitude: float = 0.0, trials: int = 10, seed: int = 0,
                   sigma_w=0.125, sigma_h: float = 0.03, ccg_config: Optional[CcgConfig] = None,
                   jobs: int = 1) -> Table:
    """Wald (both estimators) and jitter-CCG p-values for repeated small datasets."""
    cfg = ccg_config or CcgConfig(bin_width=0.002, max_lag=0.1, jitter_window=0.1, n_mc=1000)
    args = [(k, seed, amplitude, trials, sigma_w, sigma_h, cfg) for k in range(reps)]
    res = _map(_pvalue_rep, args, jobs)
    return Table.from_records([{"rep": k, "amplitude": amplitude, "p_modified": a, "p_standard": b, "p_ccg": c}
                               for k, (a, b, c) in enumerate(res)])


def pvalue_uniformity(reps: int = 100, trials: int = 10, seed: int = 0, sigma_w=0.125, jobs: int = 1,
                      ccg_config: Optional[CcgConfig] = None) -> dict:
    """Null p-values of the three tests and their KS distance from U(0, 1)."""
    tab = pvalue_samples(reps, 0.0, trials, seed, sigma_w, ccg_config=ccg_config, jobs=jobs)
    summary = {}
    for m in ("modified", "standard", "ccg"):
        ks = stats.kstest(tab.column(f"p_{m}"), "uniform")
        summary[f"ks_stat_{m}"] = float(ks.statistic)
        summary[f"ks_p_{m}"] = float(ks.pvalue)
    return {"pvalues": tab, "summary": summary}


def roc(reps: int = 100, amplitudes=(2.0, -2.0, 1.0), trials: int = 10, seed: int = 0, sigma_w=0.125,
        jobs: int = 1, ccg_config: Optional[CcgConfig] = None) -> dict:
    """ROC of each test: null p-values against p-values under each nonzero amplitude."""
    null = pvalue_samples(reps, 0.0, trials, seed, sigma_w, ccg_config=ccg_config, jobs=jobs)
    out, summary, records = {"pvalues_null": null}, {}, []
    for a in amplitudes:
        alt = pvalue_samples(reps, a, trials, seed + 1, sigma_w, ccg_config=ccg_config, jobs=jobs)
        out[f"pvalues_alpha_{a:g}"] = alt
        for m in ("modified", "standard", "ccg"):
            curve = roc_analysis(null.column(f"p_{m}"), alt.column(f"p_{m}"))
            summary[f"auc_{m}_alpha_{a:g}"] = curve.auc
            records.extend({"amplitude": a, "method": m, "fpr": float(x), "tpr": float(y)}
                           for x, y in zip(curve.fpr, curve.tpr))
    out["roc_points"] = Table.from_records(records)
    out["summary"] = summary
    return out


RUNNERS = {"sinusoid_bias": sinusoid_bias, "sigma_w_sweep": sigma_w_sweep, "full_connection": full_connection,
           "multivariate6": multivariate6, "pvalue_uniformity": pvalue_uniformity, "roc": roc}
