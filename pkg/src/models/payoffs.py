"""
Payoff functionals
Markovian payoffs g(x_T) and Asian payoffs phi(a(x), x_T) with a(x) = integral of x against mu,
together with their Frechet derivative representation (density part + terminal atom)
"""

import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import pandas as pd

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class PayoffSpec:
    """
    Terminal path functional and its Frechet derivative

    For an Asian payoff, mu has an atomless part described by its cumulative
    mass weight_cdf(t) on [0, T) and an atom terminal_weight at T. On a time
    grid the atomless mass of [t_k, t_{k+1}) is carried by the left node t_k.
    """

    name: str
    kind: str
    maturity: float = 1.0
    terminal: Optional[Callable] = None
    terminal_grad: Optional[Callable] = None
    phi: Optional[Callable] = None
    phi_da: Optional[Callable] = None
    phi_dx: Optional[Callable] = None
    weight_cdf: Optional[Callable] = None
    terminal_weight: float = 0.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ('markovian', 'asian'):
            raise DomainError(f"payoff kind must be 'markovian' or 'asian', got '{self.kind}'")
        if self.kind == 'markovian' and (self.terminal is None or self.terminal_grad is None):
            raise DomainError("markovian payoff needs terminal and terminal_grad")
        if self.kind == 'asian' and None in (self.phi, self.phi_da, self.phi_dx):
            raise DomainError("asian payoff needs phi, phi_da and phi_dx")

    @property
    def is_markovian(self):
        return self.kind == 'markovian'

    def density_mass(self):
        """Total atomless mass of mu on [0, T)"""
        if self.is_markovian or self.weight_cdf is None:
            return 0.0
        return float(self.weight_cdf(self.maturity))

    def density_masses(self, t_nodes):
        """Atomless mass of each interval [t_k, t_{k+1}) carried by its left node"""
        t_nodes = np.asarray(t_nodes, dtype=float)
        if self.is_markovian or self.weight_cdf is None:
            return np.zeros(len(t_nodes) - 1)
        return np.diff(self.weight_cdf(t_nodes))

    def terminal_values(self, xs):
        """Markovian payoff on a price grid"""
        if not self.is_markovian:
            raise DomainError(f"payoff '{self.name}' is path dependent; use augmented_terminal")
        return np.asarray(self.terminal(np.asarray(xs, dtype=float)), dtype=float)

    def augmented_terminal(self, xs, ms):
        """Asian payoff on the (x, m) mesh, m being the atomless running average"""
        xx, mm = np.meshgrid(np.asarray(xs, dtype=float), np.asarray(ms, dtype=float), indexing='ij')
        if self.is_markovian:
            return self.terminal(xx)
        return self.phi(mm + self.terminal_weight * xx, xx)

    def average(self, paths, t_nodes):
        """a(x) for discrete paths of shape (..., n+1)"""
        paths = np.asarray(paths, dtype=float)
        masses = self.density_masses(t_nodes)
        return paths[..., :-1] @ masses + self.terminal_weight * paths[..., -1]

    def evaluate(self, paths, t_nodes):
        """Payoff of discrete paths of shape (..., n+1)"""
        paths = np.asarray(paths, dtype=float)
        _check_path_grid(paths, t_nodes)
        if self.is_markovian:
            return self.terminal(paths[..., -1])
        return self.phi(self.average(paths, t_nodes), paths[..., -1])

    def frechet_masses(self, paths, t_nodes):
        """
        Frechet derivative lambda_Phi(., x) as node masses

        Returns:
            Array of the paths' shape; entry k < n is the mass of [t_k, t_{k+1}),
            entry n the terminal atom
        """
        paths = np.asarray(paths, dtype=float)
        _check_path_grid(paths, t_nodes)
        lam = np.zeros_like(paths)
        if self.is_markovian:
            lam[..., -1] = self.terminal_grad(paths[..., -1])
            return lam
        a = self.average(paths, t_nodes)
        x_T = paths[..., -1]
        da = np.asarray(self.phi_da(a, x_T), dtype=float)
        lam[..., :-1] = da[..., None] * self.density_masses(t_nodes)
        lam[..., -1] = self.phi_dx(a, x_T) + da * self.terminal_weight
        return lam

    def total_variation(self, paths, t_nodes):
        """Total variation norm of lambda_Phi along each path"""
        return np.sum(np.abs(self.frechet_masses(paths, t_nodes)), axis=-1)


def _check_path_grid(paths, t_nodes):
    if paths.shape[-1] != len(t_nodes):
        raise DomainError(f"path has {paths.shape[-1]} nodes but the time grid has {len(t_nodes)}")


def _step(x):
    return np.where(np.asarray(x) > 0, 1.0, 0.0)


def call_payoff(strike, maturity=1.0):
    K = float(strike)
    return PayoffSpec(name='call', kind='markovian', maturity=maturity,
                      terminal=lambda x: np.maximum(x - K, 0.0),
                      terminal_grad=lambda x: _step(x - K),
                      params={'strike': K})


def put_payoff(strike, maturity=1.0):
    K = float(strike)
    return PayoffSpec(name='put', kind='markovian', maturity=maturity,
                      terminal=lambda x: np.maximum(K - x, 0.0),
                      terminal_grad=lambda x: -_step(K - x),
                      params={'strike': K})


def digital_payoff(strike, maturity=1.0):
    K = float(strike)
    return PayoffSpec(name='digital', kind='markovian', maturity=maturity,
                      terminal=lambda x: np.where(np.asarray(x) >= K, 1.0, 0.0),
                      terminal_grad=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                      params={'strike': K})


def butterfly_payoff(strike_low, strike_high, maturity=1.0):
    K1, K2 = float(strike_low), float(strike_high)
    if not K1 < K2:
        raise DomainError(f"butterfly needs strike_low < strike_high, got {K1}, {K2}")
    mid = 0.5 * (K1 + K2)

    def terminal(x):
        return np.maximum(x - K1, 0.0) - 2 * np.maximum(x - mid, 0.0) + np.maximum(x - K2, 0.0)

    def grad(x):
        return _step(x - K1) - 2 * _step(x - mid) + _step(x - K2)

    return PayoffSpec(name='butterfly', kind='markovian', maturity=maturity,
                      terminal=terminal, terminal_grad=grad,
                      params={'strike_low': K1, 'strike_high': K2})


def affine_payoff(slope, intercept, maturity=1.0):
    b, c = float(slope), float(intercept)
    return PayoffSpec(name='affine', kind='markovian', maturity=maturity,
                      terminal=lambda x: b * np.asarray(x, dtype=float) + c,
                      terminal_grad=lambda x: np.full(np.shape(x), b),
                      params={'slope': b, 'intercept': c})


def table_payoff(xs, phi, maturity=1.0, name='table', params=None):
    """
    Piecewise-linear payoff through (xs, phi), extended linearly beyond the table

    Used for face-lifted payoffs, whose Frechet derivative is the slope of the lifted table.
    """
    xs = np.asarray(xs, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if xs.ndim != 1 or xs.shape != phi.shape or len(xs) < 2 or np.any(np.diff(xs) <= 0):
        raise DomainError("table payoff needs >= 2 strictly increasing x values with matching phi")
    slopes = np.diff(phi) / np.diff(xs)

    def grad(x):
        idx = np.clip(np.searchsorted(xs, x, side='right') - 1, 0, len(slopes) - 1)
        return slopes[idx]

    def terminal(x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(xs, x, side='right') - 1, 0, len(slopes) - 1)
        return phi[idx] + slopes[idx] * (x - xs[idx])

    return PayoffSpec(name=name, kind='markovian', maturity=maturity,
                      terminal=terminal, terminal_grad=grad, params=dict(params or {}))


def tabulated_payoff(path, maturity=1.0):
    """Payoff read from a CSV with header x,phi, linearly interpolated"""
    df = pd.read_csv(path)
    if list(df.columns[:2]) != ['x', 'phi']:
        raise ConfigError(f"payoff.path: {path} must have header x,phi")
    xs = df['x'].to_numpy(dtype=float)
    phi = df['phi'].to_numpy(dtype=float)
    if len(xs) < 2 or np.any(np.diff(xs) <= 0):
        raise ConfigError(f"payoff.path: {path} needs >= 2 strictly increasing x values")
    return table_payoff(xs, phi, maturity=maturity, name='tabulated', params={'path': str(path)})


def _asian_weights(weight, maturity):
    if weight == 'uniform':
        return (lambda t: np.asarray(t, dtype=float) / maturity), 0.0
    if weight == 'terminal':
        return (lambda t: np.zeros_like(np.asarray(t, dtype=float))), 1.0
    raise ConfigError(f"payoff.weight: unknown Asian weight '{weight}' (expected uniform or terminal)")


def asian_call_payoff(strike, weight='uniform', maturity=1.0):
    K = float(strike)
    cdf, atom = _asian_weights(weight, maturity)
    return PayoffSpec(name='asian_call', kind='asian', maturity=maturity,
                      phi=lambda a, x: np.maximum(a - K, 0.0),
                      phi_da=lambda a, x: _step(a - K),
                      phi_dx=lambda a, x: np.zeros_like(np.asarray(x, dtype=float)),
                      weight_cdf=cdf, terminal_weight=atom,
                      params={'strike': K, 'weight': weight})


def asian_linear_payoff(weight='uniform', maturity=1.0):
    cdf, atom = _asian_weights(weight, maturity)
    return PayoffSpec(name='asian_linear', kind='asian', maturity=maturity,
                      phi=lambda a, x: np.asarray(a, dtype=float) + 0.0 * np.asarray(x, dtype=float),
                      phi_da=lambda a, x: np.ones(np.broadcast(a, x).shape),
                      phi_dx=lambda a, x: np.zeros(np.broadcast(a, x).shape),
                      weight_cdf=cdf, terminal_weight=atom,
                      params={'weight': weight})


PAYOFF_FAMILIES = {
    'call': (call_payoff, ('strike',)),
    'put': (put_payoff, ('strike',)),
    'digital': (digital_payoff, ('strike',)),
    'butterfly': (butterfly_payoff, ('strike_low', 'strike_high')),
    'affine': (affine_payoff, ('slope', 'intercept')),
    'tabulated': (tabulated_payoff, ('path',)),
    'asian_call': (asian_call_payoff, ('strike', 'weight')),
    'asian_linear': (asian_linear_payoff, ('weight',)),
}

_COMPACT = re.compile(r'^\s*([a-z_]+)\s*\((.*)\)\s*$')


def make_payoff(family, params=None, maturity=1.0):
    """
    Build a payoff from its family name

    Args:
        family: family name, or the compact form 'call(1.0)', 'butterfly(0.9, 1.1)'
        params: dict of named parameters (used when the compact form is not given)
        maturity: horizon T
    """
    params = dict(params or {})
    match = _COMPACT.match(family)
    if match:
        family = match.group(1)
        positional = [p.strip() for p in match.group(2).split(',') if p.strip()]
        if family in PAYOFF_FAMILIES:
            for name, value in zip(PAYOFF_FAMILIES[family][1], positional):
                params[name] = value
    if family not in PAYOFF_FAMILIES:
        raise ConfigError(f"payoff.family: unknown payoff family '{family}' "
                          f"(expected one of {sorted(PAYOFF_FAMILIES)})")
    builder, names = PAYOFF_FAMILIES[family]
    if family.startswith('asian') and 'weight' not in params:
        params['weight'] = 'uniform'
    missing = [name for name in names if name not in params]
    if missing:
        raise ConfigError(f"payoff.{missing[0]}: missing parameter for payoff family '{family}'")
    args = []
    for name in names:
        value = params[name]
        if name in ('path', 'weight'):
            args.append(str(value))
            continue
        try:
            args.append(float(value))
        except ValueError as e:
            raise ConfigError(f"payoff.{name}: expected a number, got '{value}'") from e
    return builder(*args, maturity=maturity)
