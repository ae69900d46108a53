"""Multivariate Hawkes processes with heterogeneous background activity.

Simulation by thinning, a modified maximum-likelihood fit that absorbs slow
background fluctuations with a smoothed-source nuisance column, jitter
cross-correlograms, closed-form bias and variance curves, and the tests built
on top of them.
"""
__version__ = "0.1.0"

from .core import BSplineBasis, EventSequence, Stacked, TrialSet, gaussian_eval, smoothed_train
from .simulate import NetworkSpec, scenario_presets, thinning_simulate
from .estimate import (DEFAULT_GRID, DesignSpec, ExponentialBasis, FitFailure, FitResult, SplineBasis,
                       SquareBasis, fit_fixed_sigma, fit_modified_mle, fit_multivariate_pairwise,
                       fit_nonparametric, fit_standard_mhp)
from .ccg import CcgConfig, CcgResult, compute_ccg, jitter_resample, mc_null_inference
from .theory import CoxTheoryParams, bias_approx, bias_hawkes, theory_curves, variance_approx
from .inference import (McmcChain, NetworkEdges, TestOutcome, extract_network, ks_rescaling_test, mh_sample,
                        roc_analysis, wald_test)
from .io import ExperimentConfig, read_spikes, write_results, write_spikes

__all__ = [
    "BSplineBasis", "EventSequence", "Stacked", "TrialSet", "gaussian_eval", "smoothed_train",
    "NetworkSpec", "scenario_presets", "thinning_simulate",
    "DEFAULT_GRID", "DesignSpec", "ExponentialBasis", "FitFailure", "FitResult", "SplineBasis", "SquareBasis",
    "fit_fixed_sigma", "fit_modified_mle", "fit_multivariate_pairwise", "fit_nonparametric", "fit_standard_mhp",
    "CcgConfig", "CcgResult", "compute_ccg", "jitter_resample", "mc_null_inference",
    "CoxTheoryParams", "bias_approx", "bias_hawkes", "theory_curves", "variance_approx",
    "McmcChain", "NetworkEdges", "TestOutcome", "extract_network", "ks_rescaling_test", "mh_sample",
    "roc_analysis", "wald_test",
    "ExperimentConfig", "read_spikes", "write_results", "write_spikes",
]
