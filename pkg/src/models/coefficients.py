"""
Coefficient families for the impact model
Each family is a callable (t, x) -> array, vectorised over numpy inputs
"""

import numpy as np
import pandas as pd

from .errors import ConfigError, DomainError


class Coefficient:
    """Base coefficient map (t, x) -> value"""

    state_dependent = True

    def __call__(self, t, x):
        raise NotImplementedError

    def derivative(self, t, x):
        """Partial derivative in x"""
        raise NotImplementedError


class ConstantCoefficient(Coefficient):
    state_dependent = False

    def __init__(self, value):
        self.value = float(value)

    def __call__(self, t, x):
        return np.full(np.broadcast(np.asarray(t, dtype=float), np.asarray(x, dtype=float)).shape,
                       self.value)

    def derivative(self, t, x):
        return np.zeros(np.broadcast(np.asarray(t, dtype=float), np.asarray(x, dtype=float)).shape)


class AffineCoefficient(Coefficient):
    """intercept + slope * x, clipped to [lower, upper]"""

    def __init__(self, intercept, slope, lower, upper):
        if not lower < upper:
            raise DomainError(f"affine coefficient needs lower < upper, got {lower}, {upper}")
        self.intercept = float(intercept)
        self.slope = float(slope)
        self.lower = float(lower)
        self.upper = float(upper)

    def _raw(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.intercept + self.slope * x,
                               np.broadcast(np.asarray(t, dtype=float), x).shape)

    def __call__(self, t, x):
        return np.clip(self._raw(t, x), self.lower, self.upper)

    def derivative(self, t, x):
        raw = self._raw(t, x)
        inside = (raw > self.lower) & (raw < self.upper)
        return np.where(inside, self.slope, 0.0)


class CevClampedCoefficient(Coefficient):
    """scale * |x|**beta, clipped to [lower, upper]"""

    def __init__(self, scale, beta, lower, upper):
        if not 0 < lower < upper:
            raise DomainError(f"cev-clamped coefficient needs 0 < lower < upper, got {lower}, {upper}")
        self.scale = float(scale)
        self.beta = float(beta)
        self.lower = float(lower)
        self.upper = float(upper)

    def _raw(self, t, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide='ignore'):
            raw = self.scale * np.abs(x) ** self.beta
        return np.broadcast_to(raw, np.broadcast(np.asarray(t, dtype=float), x).shape)

    def __call__(self, t, x):
        return np.clip(self._raw(t, x), self.lower, self.upper)

    def derivative(self, t, x):
        x = np.broadcast_to(np.asarray(x, dtype=float),
                            np.broadcast(np.asarray(t, dtype=float), np.asarray(x)).shape)
        raw = self._raw(t, x)
        inside = (raw > self.lower) & (raw < self.upper) & (x != 0)
        safe_x = np.where(x == 0, 1.0, x)
        slope = self.scale * self.beta * np.abs(safe_x) ** (self.beta - 1) * np.sign(safe_x)
        return np.where(inside, slope, 0.0)


class TabulatedCoefficient(Coefficient):
    """Piecewise-linear interpolation of a table of (x, value), flat outside the table"""

    def __init__(self, xs, values, source=None):
        xs = np.asarray(xs, dtype=float)
        values = np.asarray(values, dtype=float)
        if xs.ndim != 1 or xs.shape != values.shape or len(xs) < 2:
            raise DomainError("tabulated coefficient needs two equal-length 1-d arrays of >= 2 points")
        if np.any(np.diff(xs) <= 0):
            raise DomainError("tabulated coefficient grid must be strictly increasing")
        self.xs = xs
        self.values = values
        self.source = source
        self._slopes = np.diff(values) / np.diff(xs)

    @classmethod
    def from_csv(cls, path):
        """Load a two-column CSV with header x,value"""
        df = pd.read_csv(path)
        if list(df.columns[:2]) != ['x', 'value']:
            raise ConfigError(f"tabulated coefficient file {path} must have header x,value")
        return cls(df['x'].to_numpy(), df['value'].to_numpy(), source=str(path))

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.xs, self.values)
        return np.broadcast_to(out, np.broadcast(np.asarray(t, dtype=float), x).shape).copy()

    def derivative(self, t, x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.xs, x, side='right') - 1, 0, len(self._slopes) - 1)
        inside = (x >= self.xs[0]) & (x <= self.xs[-1])
        out = np.where(inside, self._slopes[idx], 0.0)
        return np.broadcast_to(out, np.broadcast(np.asarray(t, dtype=float), x).shape).copy()


COEFFICIENT_FAMILIES = {
    'constant': (ConstantCoefficient, ('value',)),
    'affine': (AffineCoefficient, ('intercept', 'slope', 'lower', 'upper')),
    'cev-clamped': (CevClampedCoefficient, ('scale', 'beta', 'lower', 'upper')),
    'tabulated': (TabulatedCoefficient.from_csv, ('path',)),
}


def make_coefficient(family, params, key='coefficient'):
    """
    Build a coefficient from a family name and a parameter dict

    Args:
        family: one of COEFFICIENT_FAMILIES
        params: dict of parameter name -> value (strings accepted)
        key: config key prefix, used in error messages
    """
    if family not in COEFFICIENT_FAMILIES:
        raise ConfigError(f"{key}.family: unknown coefficient family '{family}' "
                          f"(expected one of {sorted(COEFFICIENT_FAMILIES)})")
    builder, names = COEFFICIENT_FAMILIES[family]
    missing = [name for name in names if name not in params]
    if missing:
        raise ConfigError(f"{key}.{missing[0]}: missing parameter for family '{family}'")
    if family == 'tabulated':
        return builder(params['path'])
    try:
        return builder(*[float(params[name]) for name in names])
    except ValueError as e:
        raise ConfigError(f"{key}: {e}") from e
