"""Background models, presets and the thinning simulator."""
import numpy as np
import pytest
from scipy import stats

from hawkes_hetero.simulate import (BSplineImpact, Constant, Edge, ExponentialImpact, LinearCox, NetworkSpec,
                                    Sinusoid, SquareImpact, Tabulated, VaryingCox, normalized_dot,
                                    sample_background, scenario_presets, thinning_simulate)


def single(bg=None, baseline=10.0, horizon=5.0, trials=50, impacts=(), seed=1):
    return NetworkSpec(process_ids=("a",), baselines=(baseline,), backgrounds=(bg,), impacts=impacts,
                       horizon=horizon, trial_count=trials, seed=seed)


class TestBackgrounds:
    def test_constant(self):
        f = sample_background(Constant(level=10.0), 5.0, np.random.default_rng(0))
        np.testing.assert_array_equal(f(np.linspace(0, 5, 11)), 10.0)

    def test_linear_cox_mean(self):
        rng = np.random.default_rng(3)
        means = [sample_background(LinearCox(rho=30, sigma_I=0.1), 5.0, rng).tabulate(5.0, 0.005)[1].mean()
                 for _ in range(200)]
        m, se = np.mean(means), np.std(means, ddof=1) / np.sqrt(len(means))
        assert abs(m - 30) < 3 * se

    def test_linear_cox_autocovariance(self):
        """Autocovariance of f at lags 0, sigma_I, 2 sigma_I matches rho (phi * phi)(u)."""
        rho, sI, dt = 30.0, 0.1, 0.01
        rng = np.random.default_rng(11)
        lags = [0, 10, 20]
        acov = []
        for _ in range(200):
            _, v = sample_background(LinearCox(rho=rho, sigma_I=sI), 20.0, rng).tabulate(20.0, dt)
            v = v - rho
            acov.append([np.mean(v[: v.size - k] * v[k:]) for k in lags])
        acov = np.array(acov)
        m, se = acov.mean(0), acov.std(0, ddof=1) / np.sqrt(len(acov))
        theory = rho * stats.norm.pdf(np.array(lags) * dt, scale=np.sqrt(2) * sI)
        assert np.all(np.abs(m - theory) < 3 * se)

    def test_varying_widths_within_range(self):
        f = sample_background(VaryingCox(rho=30, sigma_I_range=(0.08, 0.14)), 5.0, np.random.default_rng(0))
        assert f.widths.min() >= 0.08 and f.widths.max() <= 0.14

    def test_tabulated_interpolates(self):
        f = sample_background(Tabulated(t=(0.0, 1.0), values=(0.0, 2.0)), 1.0, np.random.default_rng(0))
        assert f(0.25) == pytest.approx(0.5)

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            VaryingCox(rho=1.0, sigma_I_range=(0.2, 0.1))
        with pytest.raises(ValueError):
            Sinusoid(amplitude=1.0, period=0.0)


class TestNormalizedDot:
    def grid(self, lag):
        t = np.linspace(0, 5, 5001)
        return (t, 5 * np.sin(2 * np.pi * t)), (t, 5 * np.sin(2 * np.pi * (t - lag)))

    def test_identical(self):
        a, b = self.grid(0.0)
        assert normalized_dot(a, b, 5.0, 5.0) == pytest.approx(0.5, abs=1e-6)

    def test_quarter_lag(self):
        a, b = self.grid(0.25)
        assert normalized_dot(a, b, 5.0, 5.0) == pytest.approx(0.0, abs=1e-6)

    def test_zero_and_mismatch(self):
        t = np.linspace(0, 1, 11)
        assert normalized_dot((t, np.ones(11)), (t, np.zeros(11)), 1.0, 1.0) == 0.0
        with pytest.raises(ValueError):
            normalized_dot((t, np.ones(11)), (t[:-1], np.ones(10)), 1.0, 1.0)


class TestThinning:
    def test_homogeneous_poisson(self):
        out = thinning_simulate(single(trials=200)).trials
        counts = np.array([len(s) for s in out.processes["a"]])
        assert abs(counts.mean() - 50) < 3 * np.sqrt(50 / 200)
        gaps = np.concatenate([np.diff(s.timestamps) for s in out.processes["a"]])
        assert stats.kstest(gaps * 10.0, "expon").pvalue > 0.01

    def test_silent(self):
        out = thinning_simulate(single(baseline=0.0, trials=5)).trials
        assert all(len(s) == 0 for s in out.processes["a"])

    def test_deterministic(self):
        spec = scenario_presets("linear_cox_basic", trial_count=5)
        assert thinning_simulate(spec, seed=4).trials == thinning_simulate(spec, seed=4).trials
        assert thinning_simulate(spec, seed=4).trials != thinning_simulate(spec, seed=5).trials

    def test_trial_subset_matches_full_run(self):
        spec = scenario_presets("linear_cox_basic", trial_count=6)
        full = thinning_simulate(spec, seed=2).trials
        part = thinning_simulate(spec, seed=2, trials=range(3, 6)).trials
        assert part == full.subset([3, 4, 5])

    def test_tabulated_intensity_rescaling(self):
        """Known deterministic intensity: integrated intensity between events is Exp(1)."""
        t = np.linspace(0, 10, 101)
        v = 20 + 15 * np.sin(t)
        spec = single(Tabulated(t=tuple(t), values=tuple(v)), baseline=0.0, horizon=10.0, trials=10)
        events = thinning_simulate(spec).trials.processes["a"]
        grid = np.linspace(0, 10, 100001)
        cum = np.concatenate([[0], np.cumsum(np.diff(grid) * (np.interp(grid[1:], t, v) + np.interp(grid[:-1], t, v)) / 2)])
        z = np.concatenate([np.diff(np.interp(s.timestamps, grid, cum)) for s in events])
        assert z.size >= 1000
        assert stats.kstest(z, "expon").pvalue > 0.01

    def test_linear_cox_target_rate(self):
        out = thinning_simulate(scenario_presets("linear_cox_basic"), seed=0).trials
        per_trial = np.array([len(s) / 5.0 for s in out.processes["j"]])
        se = per_trial.std(ddof=1) / np.sqrt(per_trial.size)
        assert abs(per_trial.mean() - (10 + 30 + 2 * 0.03 * 40)) < 3 * se

    def test_inhibition_clipped(self):
        """Strong inhibition never produces negative intensity (rates stay non-negative and finite)."""
        spec = NetworkSpec(process_ids=("a", "b"), baselines=(20.0, 5.0), backgrounds=(None, None),
                           impacts=(Edge(source="a", target="b", impact=SquareImpact(amplitude=-50.0, width=0.05)),),
                           horizon=5.0, trial_count=20, seed=0)
        out = thinning_simulate(spec).trials
        assert sum(len(s) for s in out.processes["b"]) < 5 * 5 * 20

    def test_bspline_impact(self):
        imp = BSplineImpact(knots=(0.0, 0.01, 0.02, 0.03), coefficients=(1.0, 2.0, 3.0, 2.0, 1.0), degree=2)
        spec = NetworkSpec(process_ids=("a", "b"), baselines=(20.0, 5.0), backgrounds=(None, None),
                           impacts=(Edge(source="a", target="b", impact=imp),), horizon=2.0, trial_count=2, seed=0)
        thinning_simulate(spec)
        assert imp(0.1) == 0.0 and imp(0.015) > 0

    def test_exponential_impact_rejected(self):
        spec = NetworkSpec(process_ids=("a",), baselines=(5.0,), backgrounds=(None,),
                           impacts=(Edge(source="a", target="a", impact=ExponentialImpact(amplitude=1.0, gamma=5.0)),),
                           horizon=1.0, trial_count=1)
        with pytest.raises(ValueError):
            thinning_simulate(spec)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            NetworkSpec(process_ids=("a", "a"), baselines=(1.0, 1.0), backgrounds=(None, None), horizon=1.0,
                        trial_count=1)
        with pytest.raises(ValueError):
            single(baseline=-1.0)

    def test_spec_json_round_trip(self):
        spec = scenario_presets("full_connection")
        assert NetworkSpec.model_validate_json(spec.model_dump_json()) == spec


class TestPresets:
    def test_linear_cox_basic(self):
        spec = scenario_presets("linear_cox_basic")
        assert spec.backgrounds[0].sigma_I == 0.1
        assert spec.impact("i", "j").width == 0.03
        assert spec.trial_count == 200 and spec.horizon == 5.0

    def test_multivariate6(self):
        spec = scenario_presets("multivariate6")
        assert len(spec.process_ids) == 6
        assert spec.backgrounds[0].rho == 20.0
        signs = {np.sign(e.impact.amplitude) for e in spec.impacts}
        assert signs == {-1.0, 1.0}

    def test_sinusoid_quarter_lag_overlap(self):
        from hawkes_hetero.experiments import sinusoid_overlap
        assert sinusoid_overlap(0.25) == pytest.approx(0.0, abs=1e-9)
        assert sinusoid_overlap(0.0) == pytest.approx(0.5, abs=1e-6)

    def test_overrides(self):
        assert scenario_presets("fast_changing").backgrounds[0].sigma_I == 0.02
        assert scenario_presets("fast_changing", sigma_I=0.008).backgrounds[0].sigma_I == 0.008
        with pytest.raises(TypeError):
            scenario_presets("sinusoid", sigma_I=0.1)
        with pytest.raises(ValueError):
            scenario_presets("nope")
