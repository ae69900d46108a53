"""Closed-form bias and variance of the square-window amplitude estimate.

Setting: two processes share a linear Cox background (Gaussian bumps of width
sigma_I on a Poisson(rho) center process), the target receives a square-window
impact of width sigma_h, and the fitted model optionally contains the
Gaussian-smoothed source train of width sigma_w.  Every quantity below is
expressed per unit observation time.

Second-order structure of the source N_i:
    continuous reduced covariance  c_Lambda(u) = rho / (sqrt(4 pi) sigma_I) exp(-u^2 / (4 sigma_I^2))
    atom at zero                   lambda_bar_i = alpha_i + rho
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erf

SQRT_PI = np.sqrt(np.pi)


@dataclass(frozen=True)
class CoxTheoryParams:
    rho: float
    sigma_I: float
    alpha_i: float
    alpha_j: float
    sigma_h: float
    T: float = 1.0
    alpha_ij: float = 0.0

    def __post_init__(self):
        if self.rho < 0 or self.alpha_i < 0 or self.alpha_j < 0:
            raise ValueError("rates must be non-negative")
        if not (self.sigma_I > 0 and self.sigma_h > 0 and self.T > 0):
            raise ValueError("sigma_I, sigma_h and T must be positive")

    @property
    def lambda_bar_i(self) -> float:
        return self.alpha_i + self.rho

    @property
    def lambda_bar_j(self) -> float:
        """Mean target rate: baseline + background + impact-driven excess."""
        return self.alpha_j + self.rho + self.alpha_ij * self.sigma_h * self.lambda_bar_i

    @classmethod
    def linear_cox_basic(cls, **kw) -> "CoxTheoryParams":
        base = dict(rho=30.0, sigma_I=0.1, alpha_i=10.0, alpha_j=10.0, sigma_h=0.03, T=1000.0, alpha_ij=2.0)
        base.update(kw)
        return cls(**base)


def reduced_cov_lambda(u, p: CoxTheoryParams):
    """Continuous reduced covariance density of the source at lag u."""
    u = np.asarray(u, dtype=float)
    out = p.rho / (2 * SQRT_PI * p.sigma_I) * np.exp(-u * u / (4 * p.sigma_I ** 2))
    return float(out) if out.ndim == 0 else out


def reduced_cov_N(u, p: CoxTheoryParams):
    """(continuous part at u, atom mass at lag 0) of the source's reduced covariance."""
    return reduced_cov_lambda(u, p), p.lambda_bar_i


def inner_products(p: CoxTheoryParams, sigma_w: float) -> dict:
    """Per-unit-time inner products of the mean-centred bases.

    Keys: S_ww, S_hh, S_hw, S_wl (smoothed basis vs background), S_hl (impact
    basis vs background).
    """
    if not sigma_w > 0:
        raise ValueError("sigma_w must be positive")
    rho, sI, sh, lam = p.rho, p.sigma_I, p.sigma_h, p.lambda_bar_i
    sw = float(sigma_w)
    e = erf(sh / (2 * sI))
    S_ww = rho / (2 * SQRT_PI * np.sqrt(sw ** 2 + sI ** 2)) + lam / (2 * SQRT_PI * sw)
    S_hh = rho * (sh * e - 2 * sI / SQRT_PI * (-np.expm1(-sh ** 2 / (4 * sI ** 2)))) + lam * sh
    S_hw = 0.5 * rho * erf(sh / np.sqrt(2 * sw ** 2 + 4 * sI ** 2)) + 0.5 * lam * erf(sh / (np.sqrt(2) * sw))
    S_wl = rho / (SQRT_PI * np.sqrt(2 * sw ** 2 + 4 * sI ** 2))
    S_hl = 0.5 * rho * e
    return {"S_ww": float(S_ww), "S_hh": float(S_hh), "S_hw": float(S_hw), "S_wl": float(S_wl), "S_hl": float(S_hl)}


def _denominator(S) -> float:
    return S["S_ww"] * S["S_hh"] - S["S_hw"] ** 2


def bias_approx(p: CoxTheoryParams, sigma_w: float) -> float:
    """Asymptotic bias of the amplitude estimate with the smoothed nuisance term."""
    S = inner_products(p, sigma_w)
    den = _denominator(S)
    if not den > 0:
        raise ValueError("degenerate configuration: non-positive Gram determinant")
    return (S["S_ww"] * S["S_hl"] - S["S_hw"] * S["S_wl"]) / den


def bias_hawkes(p: CoxTheoryParams) -> float:
    """Asymptotic bias of the standard Hawkes fit (no nuisance term)."""
    rho, sI, sh = p.rho, p.sigma_I, p.sigma_h
    e = erf(sh / (2 * sI))
    S_hh = rho * (sh * e - 2 * sI / SQRT_PI * (-np.expm1(-sh ** 2 / (4 * sI ** 2)))) + p.lambda_bar_i * sh
    return float(0.5 * rho * e / S_hh)


def variance_approx(p: CoxTheoryParams, sigma_w: float) -> float:
    """Asymptotic variance of the amplitude estimate with the nuisance term."""
    S = inner_products(p, sigma_w)
    den = _denominator(S)
    if not den > 0:
        raise ValueError("degenerate configuration: non-positive Gram determinant")
    return p.lambda_bar_j / p.T * S["S_ww"] / den


def variance_hawkes(p: CoxTheoryParams) -> float:
    """Asymptotic variance of the standard Hawkes amplitude estimate."""
    S = inner_products(p, 1.0)
    return p.lambda_bar_j / p.T / S["S_hh"]


def loglik_gain(p: CoxTheoryParams, sigma_w: float) -> float:
    """Approximate expected log-likelihood gain over a constant-only model.

    Quadratic (Laplace) expansion around the constant fit: the score of the
    two centred bases is v / lambda_bar_j with v = <phi, lambda_j>, the
    information is S / lambda_bar_j, so the gain is T v' S^-1 v / (2 lambda_bar_j).
    Approximate: ignores higher-order terms and finite-sample overfitting.
    """
    S = inner_products(p, sigma_w)
    G = np.array([[S["S_ww"], S["S_hw"]], [S["S_hw"], S["S_hh"]]])
    v = np.array([S["S_wl"] + p.alpha_ij * S["S_hw"], S["S_hl"] + p.alpha_ij * S["S_hh"]])
    return float(p.T * v @ np.linalg.solve(G, v) / (2 * p.lambda_bar_j))


@dataclass(frozen=True)
class TheoryCurves:
    sigma_w: np.ndarray
    bias: np.ndarray
    se: np.ndarray
    rmse: np.ndarray
    dloglik: np.ndarray  # approximate, see loglik_gain

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma_w_ms", "bias", "se", "rmse", "dloglik_approx"])
            for row in zip(self.sigma_w * 1e3, self.bias, self.se, self.rmse, self.dloglik):
                w.writerow([repr(float(x)) for x in row])

    def roots(self) -> np.ndarray:
        """Widths where the bias changes sign (linear interpolation on the log grid)."""
        b, s = self.bias, np.log(self.sigma_w)
        k = np.flatnonzero(np.sign(b[:-1]) != np.sign(b[1:]))
        return np.exp(s[k] - b[k] * (s[k + 1] - s[k]) / (b[k + 1] - b[k]))

    def rmse_local_minima(self) -> np.ndarray:
        r = self.rmse
        k = np.flatnonzero((r[1:-1] < r[:-2]) & (r[1:-1] < r[2:])) + 1
        return self.sigma_w[k]


def theory_curves(p: CoxTheoryParams, sigma_grid) -> TheoryCurves:
    grid = np.asarray(sigma_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0):
        raise ValueError("sigma_w grid must be a non-empty vector of positive widths")
    bias = np.array([bias_approx(p, s) for s in grid])
    var = np.array([variance_approx(p, s) for s in grid])
    gain = np.array([loglik_gain(p, s) for s in grid])
    return TheoryCurves(grid, bias, np.sqrt(var), np.sqrt(bias ** 2 + var), gain)
