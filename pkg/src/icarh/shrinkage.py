"""
iCARH Horseshoe Shrinkage

Shrinkage coefficient kappa = 1 / (1 + lambda^2 sigma_beta^2 / tau) for the
hierarchy

    beta_mk | lambda_mk, sigma_beta_m ~ N(0, lambda_mk^2 sigma_beta_m^2)
    lambda_mk | tau ~ St+(tau, 0, 1)

together with its prior density, its prior mean as a function of tau, tau
calibration, and the conditional (ridge-like) posterior mean of beta_m.
"""

import logging
from typing import Iterable

import numpy as np
import pandas as pd
from scipy import integrate, optimize, special

from .exceptions import IcarhCalibrationError, IcarhDomainError, IcarhNumericError

logger = logging.getLogger(__name__)

TAU_BRACKET = (1e-2, 1e3)


def kappa(lambda_mk, sigma_beta_m, tau: float):
    """Shrinkage coefficient in (0, 1); 1 means full shrinkage."""
    lambda_mk = np.asarray(lambda_mk, dtype=float)
    sigma_beta_m = np.asarray(sigma_beta_m, dtype=float)
    return 1.0 / (1.0 + lambda_mk ** 2 * sigma_beta_m ** 2 / tau)


def _log_kappa_kernel(k, tau: float, sigma_beta: float):
    # Change of variables from St+(tau): the (1 - k + k s^2) factor carries the
    # exponent (tau + 1) / 2 and the constant is 1 / B(tau/2, 1/2); sigma = 1
    # then reduces to Beta(tau/2, 1/2).
    return (-special.betaln(tau / 2.0, 0.5) + tau * np.log(sigma_beta)
            - 0.5 * (tau + 1.0) * np.log1p(-k + k * sigma_beta ** 2))


def kappa_density(kappa_value, tau: float, sigma_beta: float):
    """
    Prior density p(kappa | tau, sigma_beta).

    p = B(tau/2, 1/2)^-1 sigma^tau kappa^(tau/2 - 1) (1 - kappa)^(-1/2)
        (1 - kappa + kappa sigma^2)^(-(tau + 1)/2)

    Raises:
        IcarhDomainError: If kappa is outside (0, 1)
    """
    k = np.asarray(kappa_value, dtype=float)
    if np.any((k <= 0) | (k >= 1)):
        raise IcarhDomainError("kappa must lie in the open interval (0, 1)")
    log_density = (_log_kappa_kernel(k, tau, sigma_beta)
                   + (tau / 2.0 - 1.0) * np.log(k) - 0.5 * np.log1p(-k))
    density = np.exp(log_density)
    return float(density) if density.ndim == 0 else density


def _kappa_moment(tau: float, sigma_beta: float, power: int) -> float:
    # algebraic endpoint weights carry the kappa^(tau/2-1) (1-kappa)^(-1/2) singularities
    def smooth(k):
        return np.exp(_log_kappa_kernel(k, tau, sigma_beta))

    value, _ = integrate.quad(smooth, 0.0, 1.0, weight='alg',
                              wvar=(tau / 2.0 - 1.0 + power, -0.5), limit=200)
    return value


def expected_kappa(tau: float, sigma_beta: float = 1.0) -> float:
    """Prior mean E(kappa | tau, sigma_beta) by adaptive quadrature."""
    if tau <= 0 or sigma_beta <= 0:
        raise IcarhDomainError("tau and sigma_beta must be positive")
    return _kappa_moment(tau, sigma_beta, 1)


def calibrate_tau(target_shrinkage: float, sigma_beta: float = 1.0) -> float:
    """
    Find tau such that E(kappa | tau, sigma_beta) equals the target.

    expected_kappa is increasing in tau, so the root is bracketed by
    bisection on log(tau) over [1e-2, 1e3].

    Raises:
        IcarhDomainError: If the target is not in (0, 1)
        IcarhCalibrationError: If the target lies outside the attainable range
    """
    if not 0 < target_shrinkage < 1:
        raise IcarhDomainError(f"target shrinkage must lie in (0, 1), got {target_shrinkage}")
    low, high = (expected_kappa(t, sigma_beta) for t in TAU_BRACKET)
    if not low <= target_shrinkage <= high:
        logger.error(f"Target {target_shrinkage} outside attainable range [{low:.6f}, {high:.6f}]")
        raise IcarhCalibrationError(target_shrinkage, (low, high))

    def excess(log_tau):
        return expected_kappa(np.exp(log_tau), sigma_beta) - target_shrinkage

    log_tau = optimize.bisect(excess, *np.log(TAU_BRACKET), xtol=1e-10)
    tau = float(np.exp(log_tau))
    logger.info(f"Calibrated tau={tau:.6g} for expected shrinkage {target_shrinkage}")
    return tau


def kappa_density_curve(taus: Iterable[float], sigma_betas: Iterable[float],
                        grid: int = 199) -> pd.DataFrame:
    """Tabulated prior densities of kappa on an interior grid, one row per (tau, sigma_beta, kappa)."""
    points = np.linspace(0.0, 1.0, grid + 2)[1:-1]
    frames = []
    for tau in taus:
        for sigma_beta in sigma_betas:
            frames.append(pd.DataFrame({
                'tau': tau,
                'sigma_beta': sigma_beta,
                'kappa': points,
                'density': kappa_density(points, tau, sigma_beta),
            }))
    return pd.concat(frames, ignore_index=True)


def conditional_beta_mean(y: np.ndarray, response: np.ndarray, sigma2_nu: float, theta: float,
                          sigma2_gamma: float, kappa_m: np.ndarray, tau: float) -> np.ndarray:
    """
    E(beta_m | Y, kappa_m, tau, mu_m) for one metabolite.

    (sum_t Y_t' Sigma^-1 Y_t + tau^-1 diag(kappa / (1 - kappa)))^-1 sum_t Y_t' Sigma^-1 mu_t
    with Sigma = (sigma2_nu / (1 - theta^2) + sigma2_gamma) I_N.

    The penalty tau^-1 kappa / (1 - kappa) equals 1 / (lambda^2 sigma_beta^2), the
    prior precision of beta_mk; a tau (1/kappa - 1) penalty would vanish as
    shrinkage grows and is not used.

    Args:
        y: Covariates, shape (N, T, K)
        response: mu for metabolite m net of its intercept, shape (N, T)
        sigma2_nu, theta, sigma2_gamma: AR(1) and subject-effect variance parameters
        kappa_m: Shrinkage coefficients, shape (K,)
        tau: Global sparsity parameter

    Returns:
        K-vector
    """
    kappa_m = np.asarray(kappa_m, dtype=float)
    if np.any((kappa_m <= 0) | (kappa_m >= 1)):
        raise IcarhDomainError("kappa must lie in the open interval (0, 1)")
    variance = sigma2_nu / (1.0 - theta ** 2) + sigma2_gamma
    n, t, k = y.shape
    design = y.reshape(n * t, k)
    gram = design.T @ design / variance
    rhs = design.T @ np.asarray(response, dtype=float).reshape(n * t) / variance
    penalty = np.diag(kappa_m / (1.0 - kappa_m)) / tau
    try:
        return np.linalg.solve(gram + penalty, rhs)
    except np.linalg.LinAlgError as e:
        raise IcarhNumericError(f"Singular system in conditional beta mean: {e}")
