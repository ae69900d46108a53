"""Command-line entry point: ``hawkes-hetero <command> [options]``.

Durations on the command line are in milliseconds and rates in spikes/s;
every file stores seconds.  The seed falls back to HAWKES_HETERO_SEED, then 0.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import ValidationError

from . import experiments as E
from .ccg import CcgConfig, mc_null_inference
from .estimate import (DEFAULT_GRID, DesignSpec, FitFailure, SplineBasis, SquareBasis, fit_fixed_sigma,
                       fit_modified_mle, fit_multivariate_pairwise, fit_nonparametric, fit_standard_mhp)
from .inference import extract_network, ks_rescaling_test
from .io import ExperimentConfig, SpikeFormatError, Table, read_spikes, write_results
from .simulate import PRESETS, NetworkSpec, scenario_presets, thinning_simulate
from .theory import CoxTheoryParams, theory_curves

MS = 1e-3


class CliError(Exception):
    """User-facing error: printed without a traceback, exit status 2."""


def _seed(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    env = os.environ.get("HAWKES_HETERO_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"HAWKES_HETERO_SEED must be an integer, got {env!r}") from None
    return 0


def parse_grid_ms(text: Optional[str]):
    """'lo:hi:n' (log-spaced, ms) or 'a,b,c' (ms) to a tuple of seconds; None gives the default grid."""
    if text is None:
        return DEFAULT_GRID
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            return tuple(np.geomspace(float(lo) * MS, float(hi) * MS, int(n)))
        return tuple(float(x) * MS for x in text.split(","))
    except ValueError:
        raise CliError(f"cannot parse sigma_w grid {text!r}; use lo:hi:n or a comma list in ms") from None


def _load(args):
    data = read_spikes(args.data, args.format, horizon=args.horizon, trials=args.trials)
    return data


def _check_units(data, *units):
    missing = [u for u in units if u not in data.processes]
    if missing:
        raise CliError(f"unknown unit id(s) {', '.join(map(repr, missing))}; available: {', '.join(data.process_ids)}")


def _design(args, data, nuisance=True):
    _check_units(data, args.source, args.target)
    if args.method == "spline":
        basis = SplineBasis(support=args.lag_window * MS, n_knots=args.knots, degree=3)
    else:
        basis = SquareBasis(args.sigma_h * MS)
    sigma_w = args.sigma_w * MS if getattr(args, "sigma_w", None) is not None else parse_grid_ms(args.sigma_w_grid)
    return DesignSpec.pair(args.source, args.target, basis, sigma_w=sigma_w, nuisance=nuisance)


def _fit(args, data):
    design = _design(args, data)
    if args.method == "standard":
        return fit_standard_mhp(design, data)
    if args.method == "spline":
        return fit_nonparametric(design, data) if design.is_grid else fit_fixed_sigma(design, data)
    return fit_modified_mle(design, data) if design.is_grid else fit_fixed_sigma(design, data)


def _report_fit(fit):
    sw = f"{fit.sigma_w_selected / MS:.1f} ms" if fit.sigma_w_selected is not None else "none"
    print(f"target {fit.target}: alpha = {fit.amplitude:.4f} +/- {fit.amplitude_se:.4f} spikes/s, "
          f"sigma_w = {sw}, converged = {fit.converged}")


# ---------------------------------------------------------------------------
# Commands


def cmd_simulate(args) -> int:
    seed = _seed(args)
    cfg = None
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        spec = cfg.scenario if isinstance(cfg.scenario, NetworkSpec) else scenario_presets(cfg.scenario)
        if args.seed is None:
            seed = cfg.seed
    elif args.spec:
        spec = NetworkSpec.model_validate_json(Path(args.spec).read_text())
    else:
        spec = scenario_presets(args.preset)
    updates = {}
    if args.trials is not None:
        updates["trial_count"] = args.trials
    if args.horizon is not None:
        updates["horizon"] = args.horizon
    if updates:
        spec = spec.with_updates(**updates)
    out = thinning_simulate(spec, seed=seed)
    write_results({"spikes": out.trials}, args.out, config=cfg or spec.model_dump(mode="json"), seed=seed)
    d = out.trials
    for pid in d.process_ids:
        rate = sum(len(s) for s in d.processes[pid]) / d.total_time()
        print(f"unit {pid}: {rate:.2f} spikes/s over {d.trial_count} trials x {d.trial_horizon:g} s")
    return 0


def cmd_fit(args) -> int:
    data = _load(args)
    fit = _fit(args, data)
    _report_fit(fit)
    if args.out:
        write_results({"fit": fit}, args.out, config=vars_config(args), seed=None)
    return 0


def cmd_ccg(args) -> int:
    data = _load(args)
    _check_units(data, args.source, args.target)
    cfg = CcgConfig(bin_width=args.bin * MS, max_lag=args.max_lag * MS, jitter_window=args.jitter * MS,
                    n_mc=args.n_mc, jitter_target=args.jitter_target)
    seed = _seed(args)
    res = mc_null_inference(data.processes[args.source], data.processes[args.target], cfg, rng=seed)
    p = res.window_pvalue(0.0, args.test_window * MS)
    print(f"{args.source}->{args.target}: p = {p:.4g} (max statistic over lags 0..{args.test_window:g} ms)")
    if args.out:
        write_results({"ccg": res}, args.out, config=vars_config(args), seed=seed)
    return 0


def cmd_theory(args) -> int:
    p = CoxTheoryParams(rho=args.rho, sigma_I=args.sigma_i * MS, alpha_i=args.alpha_i, alpha_j=args.alpha_j,
                        sigma_h=args.sigma_h * MS, T=args.T, alpha_ij=args.alpha_ij)
    curves = theory_curves(p, parse_grid_ms(args.grid))
    roots = ", ".join(f"{r / MS:.1f}" for r in curves.roots()) or "none"
    print(f"bias roots (ms): {roots}")
    k = int(np.argmin(curves.rmse))
    print(f"minimum RMSE {curves.rmse[k]:.4f} at sigma_w = {curves.sigma_w[k] / MS:.1f} ms")
    write_results({"theory": curves}, args.out, config=vars_config(args), seed=None, emit=["theory"])
    return 0


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.load(args.config) if args.config else None
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else _seed(args))
    reps = args.reps if args.reps is not None else (cfg.replications if cfg else None)
    kw = {"seed": seed, "jobs": args.jobs}
    if reps is not None:
        kw["reps"] = reps
    if args.trials is not None:
        kw["trials"] = args.trials
    res = E.RUNNERS[args.name](**kw)
    summary = res.pop("summary")
    for k, v in summary.items():
        print(f"{k}: {v:.4g}" if isinstance(v, float) else f"{k}: {v}")
    bundle = dict(res)
    bundle["summary"] = Table(("quantity", "value"), tuple(summary.items()))
    out = args.out or (cfg.output_dir if cfg else "out")
    emit = sorted(cfg.emit) if cfg else None
    write_results(bundle, out, config=cfg.canonical() if cfg else vars_config(args), seed=seed, emit=emit)
    return 0


def cmd_gof(args) -> int:
    data = _load(args)
    fit = _fit(args, data)
    outcome, qq = ks_rescaling_test(fit, data)
    print(f"KS statistic {outcome.statistic:.4f}, p = {outcome.p_value:.4g}")
    if args.out:
        write_results({"qq": qq}, args.out, config=vars_config(args), seed=None)
    return 0


def cmd_network(args) -> int:
    data = _load(args)
    basis = SquareBasis(args.sigma_h * MS)
    fits = fit_multivariate_pairwise(data, basis, sigma_w=parse_grid_ms(args.sigma_w_grid), nuisance=args.nuisance)
    failed = [k for k, f in fits.items() if isinstance(f, FitFailure)]
    net = extract_network(fits, level=args.level)
    print(f"{len(net.retained)} of {len(net.edges)} ordered pairs retained (threshold p < {net.threshold:.3g})")
    for e in net.retained:
        print(f"  {e.source}->{e.target}: {e.alpha_hat:+.3f} +/- {e.se:.3f} spikes/s, p = {e.p_value:.3g}")
    if failed:
        print(f"{len(failed)} pair fit(s) failed: {failed}", file=sys.stderr)
    write_results({"network": net}, args.out, config=vars_config(args), seed=None)
    return 0 if not failed else 1


def vars_config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# ---------------------------------------------------------------------------
# Parser


def _data_args(p):
    p.add_argument("data", help="spike file (JSONL with meta header, or CSV trial,unit,t)")
    p.add_argument("--format", choices=("auto", "jsonl", "csv"), default="auto")
    p.add_argument("--horizon", type=float, help="trial length in seconds (required for CSV)")
    p.add_argument("--trials", type=int, help="number of trials (overrides the header)")


def _fit_args(p, need_pair=True):
    if need_pair:
        p.add_argument("--source", required=True)
        p.add_argument("--target", required=True)
    p.add_argument("--method", choices=("modified", "standard", "spline"), default="modified")
    p.add_argument("--sigma-h", type=float, default=30.0, help="square impact width, ms")
    p.add_argument("--sigma-w-grid", help="smoothing widths in ms: lo:hi:n (log-spaced) or a,b,c")
    p.add_argument("--sigma-w", type=float, help="fixed smoothing width in ms (skips the grid search)")
    p.add_argument("--lag-window", type=float, default=50.0, help="spline support, ms")
    p.add_argument("--knots", type=int, default=9, help="distinct spline knots")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hawkes-hetero", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, help="random seed (default: $HAWKES_HETERO_SEED or 0)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a scenario and write spike files")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--preset", choices=PRESETS, default="linear_cox_basic")
    g.add_argument("--config", help="experiment config JSON")
    g.add_argument("--spec", help="network spec JSON")
    p.add_argument("--trials", type=int)
    p.add_argument("--horizon", type=float, help="trial length in seconds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one source->target impact")
    _data_args(p)
    _fit_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("ccg", help="jitter cross-correlogram with Monte Carlo null")
    _data_args(p)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--bin", type=float, default=2.0, help="bin width, ms")
    p.add_argument("--max-lag", type=float, default=100.0, help="ms")
    p.add_argument("--jitter", type=float, default=120.0, help="jitter window, ms")
    p.add_argument("--n-mc", type=int, default=1000)
    p.add_argument("--jitter-target", choices=("source", "target", "both"), default="source")
    p.add_argument("--test-window", type=float, default=30.0, help="lags 0..this (ms) enter the p-value")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ccg)

    p = sub.add_parser("theory", help="closed-form bias / SE / RMSE curves over sigma_w")
    p.add_argument("--rho", type=float, default=30.0, help="center rate, events/s")
    p.add_argument("--sigma-i", type=float, default=100.0, help="bump width, ms")
    p.add_argument("--alpha-i", type=float, default=10.0)
    p.add_argument("--alpha-j", type=float, default=10.0)
    p.add_argument("--alpha-ij", type=float, default=2.0)
    p.add_argument("--sigma-h", type=float, default=30.0, help="ms")
    p.add_argument("--T", type=float, default=1000.0, help="total observation time, s")
    p.add_argument("--grid", help="sigma_w grid in ms (lo:hi:n or a,b,c)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("experiment", help="replicated simulation study")
    p.add_argument("name", choices=E.EXPERIMENTS)
    p.add_argument("--reps", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--config", help="experiment config JSON (flags take precedence)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("gof", help="time-rescaling KS goodness of fit")
    _data_args(p)
    _fit_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gof)

    p = sub.add_parser("network", help="pairwise fits and Bonferroni edge selection")
    _data_args(p)
    p.add_argument("--sigma-h", type=float, default=30.0, help="ms")
    p.add_argument("--sigma-w-grid")
    p.add_argument("--nuisance", choices=("source", "all"), default="source")
    p.add_argument("--level", type=float, default=0.01)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_network)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, SpikeFormatError, ValidationError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
