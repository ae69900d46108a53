"""End-to-end acceptance criteria at full scale; each test prints one PASS/FAIL line.

Run with ``pytest -m acceptance -s``. The whole module takes about fifteen minutes on one core.
"""
import time

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import ndtr

from hawkes_hetero.core import TrialSet, bspline_eval, bspline_integral, gaussian_eval, pad_knots
from hawkes_hetero.estimate import DesignSpec, SquareBasis, fit_modified_mle, loglik_grad_hessian, neg_loglik
from hawkes_hetero.experiments import (full_connection, multivariate6, pvalue_uniformity, sigma_w_sweep,
                                       sinusoid_bias)
from hawkes_hetero.inference import ks_rescaling_test, mh_sample, simulate_conditional
from hawkes_hetero.simulate import scenario_presets, thinning_simulate
from hawkes_hetero.theory import (CoxTheoryParams, bias_approx, bias_hawkes, inner_products, reduced_cov_N,
                                  reduced_cov_lambda)

pytestmark = [pytest.mark.acceptance, pytest.mark.slow,
              pytest.mark.filterwarnings("ignore:some bins hold more than one event")]


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def random_cox_params(rng) -> CoxTheoryParams:
    return CoxTheoryParams(rho=rng.uniform(5, 50), sigma_I=rng.uniform(0.03, 0.3), alpha_i=rng.uniform(2, 30),
                           alpha_j=rng.uniform(2, 30), sigma_h=rng.uniform(0.005, 0.06), T=rng.uniform(10, 1000),
                           alpha_ij=rng.uniform(-3, 3))


@pytest.fixture(scope="module")
def basic():
    data = thinning_simulate(scenario_presets("linear_cox_basic"), seed=0).trials
    design = DesignSpec.pair("i", "j", SquareBasis(0.03))
    return data, design, fit_modified_mle(design, data)


def test_six_node_network(verdict):
    out, secs = timed(multivariate6, reps=20)
    s = out["summary"]
    ok_std = abs(s["mean_bias_standard"] - 1.52) <= 0.3
    ok_abs = s["mean_abs_bias_modified"] <= 0.15
    ok_rmse = s["mean_rmse_modified"] <= 0.45
    verdict(1, ok_std and ok_abs and ok_rmse and secs <= 900,
            f"standard mean bias {s['mean_bias_standard']:.3f} (target 1.52 +/- 0.3), "
            f"modified mean |bias| {s['mean_abs_bias_modified']:.3f} (<= 0.15), "
            f"modified RMSE {s['mean_rmse_modified']:.3f} (<= 0.45), {secs:.0f} s")


def test_fully_connected_pair(verdict):
    out, secs = timed(full_connection, reps=20)
    s = out["summary"]
    ok = s["cross_mae_modified"] <= 0.45 and s["cross_mae_standard"] >= 1.8 and secs <= 600
    verdict(2, ok, f"cross MAE modified {s['cross_mae_modified']:.3f} (<= 0.45), "
                   f"standard {s['cross_mae_standard']:.3f} (>= 1.8), {secs:.0f} s")


def test_bias_matches_theory(verdict):
    out, secs = timed(sigma_w_sweep, reps=30)
    rows = out["bias_curve"].records()
    z = [abs(r["bias"] - r["bias_theory"]) / r["mc_se"] for r in rows]
    off = [f"{r['sigma_w_ms']:.0f} ms" for r, v in zip(rows, z) if v > 3]
    sel = out["summary"]["selected_sigma_w"]
    ok = not off and 0.100 <= sel <= 0.160 and secs <= 1200
    verdict(3, ok, f"max |bias - theory| / MC SE {max(z):.2f} (<= 3; over at {off or 'none'}), "
                   f"selected sigma_w {sel * 1e3:.1f} ms (in [100, 160]), {secs:.0f} s")


def test_extreme_widths_reach_standard_bias(verdict):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        p = random_cox_params(rng)
        h = bias_hawkes(p)
        for sw in (1e-6, 1e3):
            worst = max(worst, abs(bias_approx(p, sw) - h) / abs(h))
    verdict(4, worst <= 1e-6, f"max relative gap to the standard-fit bias {worst:.2e} (<= 1e-6) over 50 sets")


def test_sinusoid_linearity(verdict):
    out, secs = timed(sinusoid_bias, reps=20)
    s = out["summary"]
    ok = s["r_squared_standard"] >= 0.9 and s["max_abs_bias_modified"] <= 0.3 and secs <= 900
    verdict(5, ok, f"R^2 {s['r_squared_standard']:.4f} (>= 0.9), max modified |bias| "
                   f"{s['max_abs_bias_modified']:.3f} (<= 0.3), {secs:.0f} s")


def test_null_pvalue_uniformity(verdict):
    out, secs = timed(pvalue_uniformity, reps=100)
    s = out["summary"]
    ok = s["ks_p_modified"] > 0.01 and s["ks_p_ccg"] > 0.01 and s["ks_p_standard"] <= 0.01 and secs <= 1200
    verdict(6, ok, f"KS p modified {s['ks_p_modified']:.3g}, CCG {s['ks_p_ccg']:.3g} (> 0.01), "
                   f"standard {s['ks_p_standard']:.3g} (<= 0.01), {secs:.0f} s")


class TestOracles:
    """Closed forms against independent numerical evaluation."""

    @staticmethod
    def smooth_part(t, src, sw):
        return np.sum(np.exp(-0.5 * ((t - src) / sw) ** 2)) / (np.sqrt(2 * np.pi) * sw)

    @staticmethod
    def impact_count(t, src, width):
        lag = t - src
        return np.sum((lag > 0) & (lag <= width))

    def likelihood_gap(self, rng) -> float:
        trials, T = int(rng.integers(1, 4)), 1.0
        src = [np.sort(rng.uniform(0, T, rng.integers(0, 6))) for _ in range(trials)]
        tgt = [np.sort(rng.uniform(0, T, rng.integers(1, 6))) for _ in range(trials)]
        sw, width = rng.uniform(0.02, 0.3), rng.uniform(0.01, 0.1)
        b0, bw, a = rng.uniform(0.5, 20), rng.uniform(0, 3), rng.uniform(0, 5)
        data = TrialSet.from_arrays({"i": src, "j": tgt}, T)
        design = DesignSpec.pair("i", "j", SquareBasis(width), sigma_w=sw)
        nll = 0.0
        for s, e in zip(src, tgt):
            edges = np.unique(np.clip(np.concatenate([[0.0, T], s, s + width]), 0, T))
            for lo, hi in zip(edges[:-1], edges[1:]):
                # the impact count is constant on (lo, hi]; the smooth part gets a fine Simpson grid
                x = np.linspace(lo, hi, 2001)
                smooth = integrate.simpson([self.smooth_part(v, s, sw) for v in x], x=x)
                nll += b0 * (hi - lo) + bw * smooth + a * self.impact_count((lo + hi) / 2, s, width) * (hi - lo)
            nll -= sum(np.log(b0 + bw * self.smooth_part(v, s, sw) + a * self.impact_count(v, s, width)) for v in e)
        return abs(neg_loglik(design, [b0, bw, a], data) - nll) / abs(nll)

    def test_oracles(self, verdict):
        t0 = time.perf_counter()
        rng = np.random.default_rng(7)
        like = max(self.likelihood_gap(rng) for _ in range(50))

        toy = TrialSet.from_arrays({"i": [[0.1, 0.5], [0.3]], "j": [[0.12, 0.6], [0.05, 0.31, 0.9]]}, 1.0)
        design = DesignSpec.pair("i", "j", SquareBasis(0.03), sigma_w=0.1)
        grad = 0.0
        for _ in range(20):
            beta = np.array([rng.uniform(1, 20), rng.uniform(-0.5, 3), rng.uniform(-0.5, 5)])
            g, _ = loglik_grad_hessian(design, beta, toy)
            fd = np.empty(3)
            for k in range(3):
                e = np.zeros(3)
                e[k] = 1e-6 * max(1.0, abs(beta[k]))
                fd[k] = (neg_loglik(design, beta + e, toy) - neg_loglik(design, beta - e, toy)) / (2 * e[k])
            grad = max(grad, np.max(np.abs(g - fd)) / np.max(np.abs(g)))

        spline = 0.0
        for degree in (1, 2, 3):
            knots = np.sort(rng.uniform(0, 1, 7))
            padded = pad_knots(knots, degree)
            for i in range(len(padded) - degree - 1):
                lo, hi = padded[i], padded[i + degree + 1]
                num, _ = integrate.quad(lambda x: bspline_eval(i, degree, padded, x), lo, hi, points=list(knots),
                                        epsabs=0, epsrel=1e-13, limit=200)
                spline = max(spline, abs(bspline_integral(i, degree, padded) - num) / num)

        inner = 0.0
        for _ in range(10):
            p, sw = random_cox_params(rng), rng.uniform(0.01, 0.4)
            _, atom = reduced_cov_N(0.0, p)
            reach = 12 * (p.sigma_I + sw)
            cont, _ = integrate.quad(lambda u: gaussian_eval(u, np.sqrt(2) * sw) * reduced_cov_lambda(u, p),
                                     -reach, reach, epsabs=0, epsrel=1e-13, limit=400)
            s_ww = cont + atom / (2 * np.sqrt(np.pi) * sw)
            mass = lambda u: ndtr(u / sw) - ndtr((u - p.sigma_h) / sw)
            cont, _ = integrate.quad(lambda u: mass(u) * reduced_cov_lambda(u, p), -reach, reach, epsabs=0,
                                     epsrel=1e-13, limit=400)
            s_hw = cont + p.lambda_bar_i * (ndtr(p.sigma_h / sw) - 0.5)
            S = inner_products(p, sw)
            inner = max(inner, abs(S["S_ww"] - s_ww) / s_ww, abs(S["S_hw"] - s_hw) / abs(s_hw))
        secs = time.perf_counter() - t0
        ok = like <= 1e-6 and grad <= 1e-5 and spline <= 1e-10 and inner <= 1e-8 and secs <= 120
        verdict(7, ok, f"likelihood {like:.1e} (<= 1e-6), gradient {grad:.1e} (<= 1e-5), "
                       f"B-spline integral {spline:.1e} (<= 1e-10), inner products {inner:.1e} (<= 1e-8), "
                       f"{secs:.0f} s")


def test_rescaling_self_consistency_and_power(basic, verdict):
    data, _, fit = basic
    spec = scenario_presets("linear_cox_basic")
    passes = sum(ks_rescaling_test(fit, simulate_conditional(fit, data, np.random.SeedSequence([0, r])))[0].p_value
                 > 0.01 for r in range(100))
    impact_free = DesignSpec("j", (), nuisance_sources=("i",))
    rejected = []
    for r in range(50):
        fresh = thinning_simulate(spec, seed=100 + r).trials
        rejected.append(ks_rescaling_test(fit_modified_mle(impact_free, fresh), fresh)[0].p_value < 0.01)
    power = float(np.mean(rejected))
    verdict(8, passes >= 95 and power >= 0.9,
            f"resimulated data pass KS in {passes}/100 (>= 95), power against the impact-free fit "
            f"{power:.2f} (>= 0.9)")


def test_posterior_cross_check(basic, verdict):
    data, design, fit = basic
    t0 = time.perf_counter()
    fixed = mh_sample(design.fixed(fit.sigma_w_selected), data, "sigma_w_fixed", 1000, rng=1, proposal="hessian",
                      thin=20, init_fit=fit)
    a = fixed.column("impact[i->j]")
    offset = abs(a.mean() - fit.amplitude) / fit.amplitude_se
    sd_ratio = a.std(ddof=1) / fit.amplitude_se
    free = mh_sample(design, data, "sigma_w_random", 1000, rng=2, proposal="hessian", thin=5, init_fit=fit)
    lo, hi = free.interval("sigma_w")
    secs = time.perf_counter() - t0
    overlap = lo <= 0.148 and hi >= 0.119
    ok = offset <= 0.1 and abs(sd_ratio - 1) <= 0.15 and overlap and secs <= 600
    verdict(9, ok, f"posterior mean offset {offset:.3f} SE (<= 0.1), SD / SE {sd_ratio:.3f} (within 15%), "
                   f"sigma_w 95% interval [{lo * 1e3:.1f}, {hi * 1e3:.1f}] ms (overlaps [119, 148]), {secs:.0f} s")
