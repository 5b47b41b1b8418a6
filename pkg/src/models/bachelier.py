"""
Bachelier reference prices
Arithmetic Brownian motion with constant volatility: the zero-impact limit of the model
and the value of the zero-cost control alpha = sigma0
"""

import numpy as np
from scipy.stats import norm

from .errors import DomainError


def _std(sigma, tau):
    if np.any(np.asarray(sigma) <= 0):
        raise DomainError("Bachelier volatility must be positive")
    if np.any(np.asarray(tau) < 0):
        raise DomainError("time to maturity must be non-negative")
    return np.asarray(sigma, dtype=float) * np.sqrt(np.asarray(tau, dtype=float))


def bachelier_call(x, strike, sigma, tau):
    """E[(x + sigma W_tau - K)^+], vectorised over x and tau"""
    x = np.asarray(x, dtype=float)
    std = _std(sigma, tau)
    intrinsic = np.maximum(x - strike, 0.0)
    safe = np.where(std > 0, std, 1.0)
    d = (x - strike) / safe
    price = (x - strike) * norm.cdf(d) + safe * norm.pdf(d)
    return np.where(std > 0, price, intrinsic)


def bachelier_atm(sigma, tau):
    """At-the-money call value sigma sqrt(tau / 2 pi)"""
    return float(sigma * np.sqrt(tau / (2 * np.pi)))


def piecewise_linear_expectation(xs, values, mean, sigma, tau):
    """
    E[p(mean + sigma W_tau)] for the piecewise-linear interpolant p of (xs, values),
    extended linearly beyond the grid

    p is written as an affine part plus a sum of call spreads, so the result is exact.
    """
    xs = np.asarray(xs, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(xs) < 2 or xs.shape != values.shape:
        raise DomainError("piecewise-linear expectation needs matching tables of >= 2 points")
    mean = np.asarray(mean, dtype=float)
    slopes = np.diff(values) / np.diff(xs)
    out = values[0] + slopes[0] * (mean - xs[0])
    kinks = np.diff(slopes)
    for knot, jump in zip(xs[1:-1], kinks):
        if jump != 0.0:
            out = out + jump * bachelier_call(mean, knot, sigma, tau)
    return out
