"""
Functional Calculus
Frechet derivatives of path functionals, the compensating process A, discrete
vertical (Dupire) derivatives and Ito-decomposition residuals on simulated paths
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CostFrechet:
    """
    Frechet derivative of the running cost in the path

    G depends on the path only through its current value, so the derivative is
    an atom at the current time with mass dG/dx. It vanishes for constant coefficients.
    """

    model: object
    zero: bool

    @classmethod
    def from_model(cls, model):
        return cls(model=model, zero=not model.state_dependent)

    def diagonal(self, t, x, a):
        """Mass of the atom at time t: dG/dx(t, x, a)"""
        if self.zero:
            return np.zeros(np.broadcast(np.asarray(t), np.asarray(x), np.asarray(a)).shape)
        return np.asarray(self.model.dG_dx(t, x, a), dtype=float)

    def growth_ratio(self, ts, xs, a_values):
        """sup (|dG/da| + |dG/dx|) / (1 + a^2) over a grid with a > 0"""
        tt, xx, aa = np.meshgrid(np.atleast_1d(ts), np.atleast_1d(xs),
                                 np.atleast_1d(a_values), indexing='ij')
        if np.any(aa <= 0):
            raise DomainError("growth_ratio needs strictly positive controls")
        total = np.abs(self.model.dG_da(tt, xx, aa)) + np.abs(self.diagonal(tt, xx, aa))
        return float(np.max(total / (1.0 + aa ** 2)))


def eval_frechet(payoff, path, h, t_nodes):
    """First-order change sum_k h_k lambda_k of the payoff along perturbation h"""
    path = np.asarray(path, dtype=float)
    h = np.asarray(h, dtype=float)
    if h.shape != path.shape:
        raise DomainError(f"perturbation shape {h.shape} does not match path shape {path.shape}")
    return np.sum(h * payoff.frechet_masses(path, t_nodes), axis=-1)


def compute_A(payoff, cost, paths, controls, t_nodes):
    """
    A_k = sum_{j<k} lambda_j - sum_{j<k} dG/dx(t_j, x_j, a_j) dt_j, plus the terminal atom at k = n

    Args:
        payoff: PayoffSpec
        cost: CostFrechet
        paths: array (..., n+1)
        controls: array (..., n), the volatility applied over [t_j, t_{j+1})
        t_nodes: time grid of n+1 nodes

    Returns:
        Array (..., n+1)
    """
    paths = np.asarray(paths, dtype=float)
    controls = np.asarray(controls, dtype=float)
    t_nodes = np.asarray(t_nodes, dtype=float)
    if controls.shape[-1] != paths.shape[-1] - 1:
        raise DomainError("controls need one entry per time step")
    lam = payoff.frechet_masses(paths, t_nodes)
    A = np.zeros_like(paths)
    A[..., 1:] = np.cumsum(lam[..., :-1], axis=-1)
    A[..., -1] += lam[..., -1]
    if not cost.zero:
        dG = cost.diagonal(t_nodes[:-1], paths[..., :-1], controls) * np.diff(t_nodes)
        A[..., 1:] -= np.cumsum(dG, axis=-1)
    return A


def bump(path, k, y):
    """x (+)_t y: add y to the path from node k onwards"""
    out = np.array(path, dtype=float, copy=True)
    out[..., k:] += y
    return out


def dupire_vertical(fn, k, path, eps=1e-4):
    """Central estimate of the vertical derivative of fn at node k"""
    if eps <= 0:
        raise DomainError("bump size must be positive")
    return (fn(k, bump(path, k, eps)) - fn(k, bump(path, k, -eps))) / (2.0 * eps)


def ito_residual(fn, grad_fn, z_paths, t_nodes, hessian: Optional[Callable] = None,
                 ell: Optional[Callable] = None):
    """
    K_k = fn(k) - fn(0) - sum_{j<k} grad_fn(j) dZ_j
          - [sum_{j<k} hessian(j) dZ_j^2 / 2 + ell(k) - ell(0)]

    fn, grad_fn, hessian and ell take (k, paths) and return one value per path.

    Returns:
        Array (n_paths, n+1), K_0 = 0
    """
    z_paths = np.asarray(z_paths, dtype=float)
    n = z_paths.shape[-1] - 1
    if len(t_nodes) != n + 1:
        raise DomainError(f"paths have {n + 1} nodes but the time grid has {len(t_nodes)}")
    dZ = np.diff(z_paths, axis=-1)
    base = np.asarray(fn(0, z_paths), dtype=float)
    K = np.zeros_like(z_paths)
    integral = np.zeros(z_paths.shape[:-1])
    quadratic = np.zeros(z_paths.shape[:-1])
    ell0 = np.asarray(ell(0, z_paths), dtype=float) if ell is not None else 0.0
    for k in range(1, n + 1):
        integral = integral + np.asarray(grad_fn(k - 1, z_paths)) * dZ[..., k - 1]
        if hessian is not None:
            quadratic = quadratic + 0.5 * np.asarray(hessian(k - 1, z_paths)) * dZ[..., k - 1] ** 2
        correction = quadratic
        if ell is not None:
            correction = correction + np.asarray(ell(k, z_paths)) - ell0
        K[..., k] = np.asarray(fn(k, z_paths)) - base - integral - correction
    return K


def concave_family(kind, t_nodes, c=0.0, slope=1.0, intercept=0.0):
    """
    Test functionals of the current value, concave in x and non-increasing in t

    kind: 'quadratic' (-x^2 - c t), 'radial' (-sqrt(1 + x^2) - c t) or
    'affine' (slope x + intercept, constant in t)

    Returns:
        (fn, grad_fn) taking (k, paths)
    """
    t_nodes = np.asarray(t_nodes, dtype=float)
    if c < 0:
        raise DomainError("time rate c must be non-negative")
    if kind == 'quadratic':
        return (lambda k, z: -z[..., k] ** 2 - c * t_nodes[k],
                lambda k, z: -2.0 * z[..., k])
    if kind == 'radial':
        return (lambda k, z: -np.sqrt(1.0 + z[..., k] ** 2) - c * t_nodes[k],
                lambda k, z: -z[..., k] / np.sqrt(1.0 + z[..., k] ** 2))
    if kind == 'affine':
        return (lambda k, z: slope * z[..., k] + intercept,
                lambda k, z: np.full(z.shape[:-1], float(slope)))
    raise DomainError(f"unknown test functional '{kind}' (expected quadratic, radial or affine)")


def monotone_violation_rate(K, tol):
    """Share of increments K_{k+1} - K_k above tol"""
    increments = np.diff(np.asarray(K, dtype=float), axis=-1)
    return float(np.mean(increments > tol))


def simulate_martingale(n_paths, n_steps, vol, seed, maturity=1.0, x0=0.0):
    """Constant-volatility Brownian paths x0 + vol W on a uniform grid"""
    rng = np.random.Generator(np.random.Philox(key=[int(seed), 0]))
    dt = maturity / n_steps
    increments = vol * np.sqrt(dt) * rng.standard_normal((int(n_paths), int(n_steps)))
    paths = np.concatenate([np.full((int(n_paths), 1), float(x0)),
                            x0 + np.cumsum(increments, axis=1)], axis=1)
    return np.linspace(0.0, maturity, int(n_steps) + 1), paths


def surface_functional(vs, stride=1):
    """(fn, grad_fn) reading v and dv from a ValueSurface at sim node k = layer k * stride"""
    return (lambda k, z: vs.interp('v', k * stride, z[..., k]),
            lambda k, z: vs.interp('dv', k * stride, z[..., k]))


def gradient_identity(payoff, cost, ledger, x0, vs):
    """
    Compare the sample mean of A_T with dv(0, x0)

    Constant-coefficient models only need X_T; otherwise the recorded full paths are used.
    """
    if cost.zero and payoff.is_markovian:
        samples = payoff.terminal_grad(ledger.x_T)
    else:
        paths = ledger.paths
        if not paths:
            raise DomainError("state-dependent cost needs recorded paths")
        samples = compute_A(payoff, cost, paths['x'], paths['a'], ledger.t_nodes)[:, -1]
    samples = np.asarray(samples, dtype=float)
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / np.sqrt(len(samples)))
    target = vs.gradient_at(x0)
    return {'A_T_mean': mean, 'A_T_se': se, 'dv0': target,
            'z': (mean - target) / se if se > 0 else 0.0, 'n_samples': int(len(samples))}
