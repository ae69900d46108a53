"""Likelihood, Newton fits, sigma_w selection and the pairwise reduction."""
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats
from scipy.special import ndtr

from hawkes_hetero.core import TrialSet
from hawkes_hetero.estimate import (Covariate, DesignData, DesignSpec, ExponentialBasis, FitFailure,
                                    FittedIntensity, SplineBasis, SquareBasis, fit_exponential_gamma,
                                    fit_fixed_sigma, fit_modified_mle, fit_multivariate_pairwise,
                                    fit_nonparametric, fit_standard_mhp, loglik_grad_hessian, neg_loglik,
                                    write_impact_csv)
from hawkes_hetero.simulate import NetworkSpec, scenario_presets, thinning_simulate
from hawkes_hetero.theory import CoxTheoryParams, bias_hawkes

SQ = SquareBasis(0.03)
TOY = TrialSet.from_arrays({"i": [[0.1, 0.5], [0.3]], "j": [[0.12, 0.6], [0.05, 0.31, 0.9]]}, 1.0)


def toy_intensity(beta, t, trial, sigma=0.1):
    """Direct evaluation of constant + smoothed source + square impact for the toy data."""
    src = np.asarray(TOY.times("i")[trial])
    b0, bw, a = beta
    lag = t - src
    smooth = np.sum(np.exp(-0.5 * (lag / sigma) ** 2) / (np.sqrt(2 * np.pi) * sigma))
    return b0 + bw * smooth + a * np.sum((lag > 0) & (lag <= 0.03))


@pytest.fixture(scope="module")
def basic():
    return thinning_simulate(scenario_presets("linear_cox_basic"), seed=0).trials


@pytest.fixture(scope="module")
def basic_fit(basic):
    return fit_modified_mle(DesignSpec.pair("i", "j", SQ), basic)


class TestLikelihood:
    design = DesignSpec.pair("i", "j", SQ, sigma_w=0.1)
    beta = np.array([5.0, 1.5, 2.0])

    def test_closed_form(self):
        ll = 0.0
        for r in range(2):
            ll += sum(np.log(toy_intensity(self.beta, t, r)) for t in TOY.times("j")[r])
            src = np.asarray(TOY.times("i")[r])
            ll -= self.beta[0] + self.beta[1] * np.sum(ndtr((1 - src) / 0.1) - ndtr(-src / 0.1))
            ll -= self.beta[2] * np.sum(np.minimum(0.03, 1 - src))
        assert neg_loglik(self.design, self.beta, TOY) == pytest.approx(-ll, rel=1e-12)

    def test_riemann(self):
        comp = 0.0
        for r in range(2):
            src = TOY.times("i")[r]
            edges = sorted({0.0, 1.0, *src, *(min(s + 0.03, 1.0) for s in src)})
            for a, b in zip(edges, edges[1:]):
                comp += integrate.quad(lambda t: toy_intensity(self.beta, t, r), a, b, epsabs=0, epsrel=1e-12)[0]
        logs = sum(np.log(toy_intensity(self.beta, t, r)) for r in range(2) for t in TOY.times("j")[r])
        assert neg_loglik(self.design, self.beta, TOY) == pytest.approx(comp - logs, rel=1e-6)

    def test_infeasible_is_inf(self):
        assert neg_loglik(self.design, [-1.0, 0.0, 0.0], TOY) == np.inf
        with pytest.raises(ValueError):
            loglik_grad_hessian(self.design, [-1.0, 0.0, 0.0], TOY)

    def test_gradient_matches_finite_differences(self):
        """Relative error below 1e-5 at 20 random feasible points."""
        rng = np.random.default_rng(0)
        for _ in range(20):
            beta = np.array([rng.uniform(1, 20), rng.uniform(-0.5, 3), rng.uniform(-0.5, 5)])
            g, H = loglik_grad_hessian(self.design, beta, TOY)
            fd = np.empty(3)
            for k in range(3):
                e = np.zeros(3)
                e[k] = 1e-6 * max(1.0, abs(beta[k]))
                fd[k] = (neg_loglik(self.design, beta + e, TOY) - neg_loglik(self.design, beta - e, TOY)) / (2 * e[k])
            assert np.max(np.abs(g - fd)) / np.max(np.abs(g)) < 1e-5
            np.testing.assert_allclose(H, H.T, rtol=1e-14)
            assert np.all(np.linalg.eigvalsh(H) >= -1e-10)

    def test_unknown_process(self):
        with pytest.raises(KeyError):
            neg_loglik(DesignSpec.pair("x", "j", SQ, sigma_w=0.1), [1, 0, 0], TOY)


class TestFixedSigma:
    def test_poisson_closed_form(self):
        fit = fit_fixed_sigma(DesignSpec("j", include_smoothed_nuisance=False), TOY)
        assert fit.coef[0] == pytest.approx(5 / 2, rel=1e-10)
        assert fit.std_errors[0] == pytest.approx(np.sqrt(5) / 2, rel=1e-8)
        assert fit.converged

    def test_objective_monotone(self, basic):
        fit = fit_fixed_sigma(DesignSpec.pair("i", "j", SQ, sigma_w=0.125), basic)
        assert fit.converged and fit.iterations <= 100
        assert np.all(np.diff(fit.objective_trace) <= 0)

    def test_no_target_events(self):
        data = TrialSet.from_arrays({"i": [[0.1]], "j": [[]]}, 1.0)
        with pytest.raises(ValueError):
            fit_fixed_sigma(DesignSpec.pair("i", "j", SQ, sigma_w=0.1), data)

    def test_grid_design_needs_modified_fit(self):
        with pytest.raises(ValueError):
            fit_fixed_sigma(DesignSpec.pair("i", "j", SQ), TOY)

    def test_no_background_unbiased(self):
        spec = scenario_presets("linear_cox_basic", rho=0.0, trial_count=100)
        fit = fit_standard_mhp(DesignSpec.pair("i", "j", SQ), thinning_simulate(spec, seed=1).trials)
        assert abs(fit.amplitude - 2.0) < 2 * fit.amplitude_se

    def test_information_additivity(self):
        """Doubling the trial count halves the Hessian-based variance."""
        spec = scenario_presets("linear_cox_basic", trial_count=200)
        data = thinning_simulate(spec, seed=3).trials
        design = DesignSpec.pair("i", "j", SQ, sigma_w=0.125)
        v_half = fit_fixed_sigma(design, data.subset(range(100))).amplitude_se ** 2
        v_full = fit_fixed_sigma(design, data).amplitude_se ** 2
        assert v_half / v_full == pytest.approx(2.0, rel=0.15)


class TestModifiedMle:
    def test_selected_width_in_range(self, basic_fit):
        assert 0.100 <= basic_fit.sigma_w_selected <= 0.160
        assert basic_fit.converged

    def test_amplitude_near_truth(self, basic_fit):
        assert abs(basic_fit.amplitude - 2.0) < 3 * basic_fit.amplitude_se

    def test_profile_recorded_and_maximal(self, basic_fit):
        sig, ll = np.array(basic_fit.sigma_w_profile).T
        assert sig.size == 25
        assert basic_fit.sigma_w_selected == sig[np.argmax(ll)]
        assert basic_fit.loglik == pytest.approx(ll.max())

    def test_refine_not_worse(self, basic, basic_fit):
        refined = fit_modified_mle(DesignSpec.pair("i", "j", SQ), basic, refine=True)
        assert refined.loglik >= basic_fit.loglik - 1e-9

    def test_standard_bias_matches_theory(self, basic):
        fit = fit_standard_mhp(DesignSpec.pair("i", "j", SQ), basic)
        expected = 2.0 + bias_hawkes(CoxTheoryParams.linear_cox_basic())
        assert abs(fit.amplitude - expected) < 3 * fit.amplitude_se
        assert fit.sigma_w_selected is None and fit.beta_w is None

    def test_flipped_amplitude_keeps_width(self, basic_fit):
        data = thinning_simulate(scenario_presets("linear_cox_basic", amplitude=-2.0), seed=0).trials
        fit = fit_modified_mle(DesignSpec.pair("i", "j", SQ), data)
        assert abs(np.log(fit.sigma_w_selected / basic_fit.sigma_w_selected)) <= np.log(10) / 12 + 1e-9
        assert abs(fit.amplitude + 2.0) < 3 * fit.amplitude_se

    @pytest.mark.slow
    def test_width_grows_with_background_timescale(self):
        """Selected width (from the replicate-averaged profile) increases with sigma_I."""
        chosen = []
        for sI in (0.08, 0.10, 0.12):
            total = 0.0
            for seed in range(3):
                data = thinning_simulate(scenario_presets("linear_cox_basic", sigma_I=sI), seed=seed).trials
                sig, ll = np.array(fit_modified_mle(DesignSpec.pair("i", "j", SQ), data).sigma_w_profile).T
                total = total + ll
            chosen.append(sig[np.argmax(total)])
        assert chosen[0] < chosen[1] < chosen[2]

    @pytest.mark.slow
    def test_true_background_covariate_shrinks_bias(self, basic):
        """Supplying the realized background as a known basis removes most of the standard-fit bias."""
        out = thinning_simulate(scenario_presets("linear_cox_basic"), seed=0, keep_backgrounds=True)
        grid = out.realized_backgrounds[0]["j"].tabulate(5.0, 0.002)[0]
        vals = np.array([bg["j"].tabulate(5.0, 0.002)[1] for bg in out.realized_backgrounds])
        design = DesignSpec.pair("i", "j", SQ, covariates=(Covariate("f_j", grid, vals),))
        with_cov = fit_standard_mhp(design, out.trials)
        plain = fit_standard_mhp(DesignSpec.pair("i", "j", SQ), out.trials)
        assert abs(with_cov.amplitude - 2.0) * 5 <= abs(plain.amplitude - 2.0)

    @pytest.mark.slow
    def test_standard_bias_grows_with_impact_width(self):
        """Error of the integrated impact (amplitude bias times width) is proportional to sigma_h."""
        widths = np.array([0.01, 0.02, 0.03, 0.04])
        bias, se = [], []
        for k, sh in enumerate(widths):
            data = thinning_simulate(scenario_presets("linear_cox_basic", sigma_h=sh), seed=10 + k).trials
            fit = fit_standard_mhp(DesignSpec.pair("i", "j", SquareBasis(sh)), data)
            bias.append(abs(fit.amplitude - 2.0) * sh)
            se.append(fit.amplitude_se * sh)
        bias, se = np.array(bias), np.array(se)
        X = np.column_stack([np.ones(4), widths]) / se[:, None]
        coef, *_ = np.linalg.lstsq(X, bias / se, rcond=None)
        cov = np.linalg.inv(X.T @ X)
        assert coef[1] > 0
        assert abs(coef[0]) < 2 * np.sqrt(cov[0, 0])

    @pytest.mark.slow
    def test_estimator_normality(self):
        """Amplitude estimates at a fixed width pass Anderson-Darling at 1% over 100 replicates."""
        spec = scenario_presets("linear_cox_basic", trial_count=50)
        design = DesignSpec.pair("i", "j", SQ, sigma_w=0.125)
        est = [fit_fixed_sigma(design, thinning_simulate(spec, seed=1000 + r).trials).amplitude for r in range(100)]
        res = stats.anderson(est, "norm")
        assert res.statistic < res.critical_values[list(res.significance_level).index(1.0)]


class TestNonparametric:
    @pytest.mark.slow
    def test_curve_covers_square_window(self):
        """Pointwise 95% bands cover the true window at 5, 15 and 25 ms in nearly every replicate."""
        design = DesignSpec.pair("i", "j", SplineBasis(0.05, 9))
        covered = []
        for seed in range(5):
            fit = fit_nonparametric(design, thinning_simulate(scenario_presets("linear_cox_basic"), seed=seed).trials)
            _, _, lo, hi = fit.impact_curve(lags=[0.005, 0.015, 0.025])
            covered.extend((lo <= 2.0) & (2.0 <= hi))
            assert len(fit.impact()) == 11
        assert sum(covered) >= 12

    def test_zero_impact_coefficients(self):
        """Joint Wald statistic of the spline coefficients is consistent with zero impact."""
        spec = NetworkSpec(process_ids=("i", "j"), baselines=(40.0, 30.0), backgrounds=(None, None),
                           horizon=5.0, trial_count=100, seed=0)
        data = thinning_simulate(spec).trials
        fit = fit_nonparametric(DesignSpec.pair("i", "j", SplineBasis(0.05, 9), nuisance=False), data)
        sl = slice(*fit.impact_slices["i"])
        b = fit.coef[sl]
        stat = b @ np.linalg.solve(fit.covariance[sl, sl], b)
        assert stats.chi2.sf(stat, b.size) > 0.01

    def test_requires_spline(self):
        with pytest.raises(ValueError):
            fit_nonparametric(DesignSpec.pair("i", "j", SQ, sigma_w=0.1), TOY)

    def test_invalid_basis(self):
        with pytest.raises(ValueError):
            SplineBasis(0.05, 1)


class TestExponential:
    def test_gamma_profile(self):
        spec = NetworkSpec.model_validate({
            "process_ids": ["i", "j"], "baselines": [30.0, 10.0], "backgrounds": [None, None],
            "impacts": [{"source": "i", "target": "j",
                         "impact": {"kind": "square", "amplitude": 20.0, "width": 0.05}}],
            "horizon": 5.0, "trial_count": 60, "seed": 0})
        data = thinning_simulate(spec).trials
        design = DesignSpec.pair("i", "j", ExponentialBasis(10.0), nuisance=False)
        fit = fit_exponential_gamma(design, data, [5.0, 10.0, 20.0, 40.0, 80.0])
        gammas = [5.0, 10.0, 20.0, 40.0, 80.0]
        grid_best = max(fit_fixed_sigma(DesignSpec.pair("i", "j", ExponentialBasis(g), nuisance=False), data).loglik
                        for g in gammas)
        assert fit.loglik >= grid_best - 1e-9


class TestPairwise:
    def test_two_processes_match_direct_fit(self, basic):
        sub = basic.subset(range(40))
        pairs = fit_multivariate_pairwise(sub, SQ, sigma_w=0.125)
        direct = fit_fixed_sigma(DesignSpec.pair("i", "j", SQ, sigma_w=0.125), sub)
        assert set(pairs) == {("i", "j"), ("j", "i")}
        np.testing.assert_array_equal(pairs[("i", "j")].coef, direct.coef)

    def test_failure_isolated(self):
        data = TrialSet.from_arrays({"a": [[0.1, 0.4]], "b": [[]], "c": [[0.2, 0.5, 0.7]]}, 1.0)
        with pytest.warns(UserWarning):
            out = fit_multivariate_pairwise(data, SQ, sigma_w=0.1)
        assert isinstance(out[("a", "b")], FitFailure)
        assert not isinstance(out[("a", "c")], FitFailure)

    def test_needs_two_processes(self):
        with pytest.raises(ValueError):
            fit_multivariate_pairwise(TrialSet({"i": TOY.processes["i"]}, 2, 1.0), SQ)


class TestSerialization:
    def test_json_round_trip(self, basic_fit):
        d = json.loads(basic_fit.to_json())
        np.testing.assert_array_equal(d["coef"], basic_fit.coef)
        assert d["sigma_w_selected"] == basic_fit.sigma_w_selected
        assert d["design"]["nuisance_sources"] == ["i"]
        assert len(d["sigma_w_profile"]) == 25

    def test_impact_csv(self, basic_fit, tmp_path):
        write_impact_csv(basic_fit, tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "lag,value,ci_lo,ci_hi"
        lag, val, lo, hi = map(float, lines[1].split(","))
        assert lo <= val <= hi and val == pytest.approx(basic_fit.amplitude)


class TestFittedIntensity:
    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
    def test_order_independent(self, ts):
        fit = fit_fixed_sigma(DesignSpec.pair("i", "j", SQ, sigma_w=0.1), TOY)
        fi = FittedIntensity(fit, TOY)
        got = fi.evaluate([ts, []])[0]
        ref = [toy_intensity(fit.coef, t, 0) for t in ts]
        np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-10)

    def test_cumulative_matches_integral(self):
        fit = fit_fixed_sigma(DesignSpec.pair("i", "j", SQ, sigma_w=0.1), TOY)
        cum = FittedIntensity(fit, TOY).cumulative([[1.0], [0.4]])
        num = integrate.quad(lambda t: toy_intensity(fit.coef, t, 0), 0, 1, points=[0.1, 0.13, 0.5, 0.53],
                             epsabs=0, epsrel=1e-12)[0]
        assert cum[0][0] == pytest.approx(num, rel=1e-9)
        assert fit.neg_loglik == pytest.approx(
            cum[0][0] + FittedIntensity(fit, TOY).cumulative([[0.0], [1.0]])[1][0]
            - sum(np.log(v).sum() for v in FittedIntensity(fit, TOY).evaluate(TOY.times("j"))), rel=1e-9)

    def test_design_data_columns(self):
        dd = DesignData(DesignSpec.pair("i", "j", SQ, sigma_w=0.1), TOY)
        assert dd.model(0.1).names == ["baseline", "smoothed[i]", "impact[i->j]"]
        assert dd.impact_slices == {"i": (2, 3)}
