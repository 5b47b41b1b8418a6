"""
Convergence-rate fits
Least-squares slope of log(error) against log(step size)
"""

import numpy as np
from sklearn.linear_model import LinearRegression

from .errors import DomainError


def fit_rate(steps, errors):
    """
    Fit errors ~ C * steps**p

    Args:
        steps: step sizes (dt or dx), positive
        errors: matching error measures, positive

    Returns:
        Dict with the exponent p, the constant C and the r^2 of the fit
    """
    steps = np.asarray(steps, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if steps.shape != errors.shape or len(steps) < 2:
        raise DomainError("rate fit needs at least two (step, error) pairs")
    if np.any(steps <= 0) or np.any(errors <= 0):
        raise DomainError("rate fit needs positive steps and errors")
    X = np.log(steps)[:, None]
    y = np.log(errors)
    reg = LinearRegression().fit(X, y)
    return {
        'exponent': float(reg.coef_[0]),
        'constant': float(np.exp(reg.intercept_)),
        'r2': float(reg.score(X, y)) if len(steps) > 2 else 1.0,
    }
