"""
HJB Solver
Explicit monotone finite-difference scheme for the dual value function
d_t v + Fbar(t, x, d_xx v) = 0, solved backward from the face-lifted payoff
"""

import logging
import os
from dataclasses import dataclass, field

import joblib
import numpy as np
import pandas as pd

from .bachelier import piecewise_linear_expectation
from .errors import DomainError, NumericalHealthError, PreconditionError
from .interpolation import linear, second_difference

logger = logging.getLogger(__name__)

CFL_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SolverGrid:
    """Uniform time grid 0 = t_0 < ... < t_N = T and uniform price grid"""

    t_nodes: np.ndarray
    x_nodes: np.ndarray

    def __post_init__(self):
        t_nodes = np.asarray(self.t_nodes, dtype=float)
        x_nodes = np.asarray(self.x_nodes, dtype=float)
        for name, nodes in (('t_nodes', t_nodes), ('x_nodes', x_nodes)):
            if nodes.ndim != 1 or len(nodes) < 2:
                raise DomainError(f"{name} needs at least 2 nodes")
            steps = np.diff(nodes)
            if np.any(steps <= 0):
                raise DomainError(f"{name} must be strictly increasing")
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
                raise DomainError(f"{name} must be uniform")
        if t_nodes[0] != 0.0:
            raise DomainError("time grid must start at 0")
        object.__setattr__(self, 't_nodes', t_nodes)
        object.__setattr__(self, 'x_nodes', x_nodes)

    @classmethod
    def uniform(cls, x_min, x_max, n_x, maturity, n_steps):
        return cls(t_nodes=np.linspace(0.0, maturity, int(n_steps) + 1),
                   x_nodes=np.linspace(x_min, x_max, int(n_x)))

    @property
    def n_steps(self):
        return len(self.t_nodes) - 1

    @property
    def dt(self):
        return float(self.t_nodes[1] - self.t_nodes[0])

    @property
    def dx(self):
        return float(self.x_nodes[1] - self.x_nodes[0])

    @property
    def maturity(self):
        return float(self.t_nodes[-1])

    @property
    def domain(self):
        return float(self.x_nodes[0]), float(self.x_nodes[-1])


@dataclass
class ValueSurface:
    """
    Solved dual value function on (stored times x price nodes)

    a_star[k] and gamma_hat[k] are the control and curvature applied over
    [t_k, t_{k+1}); the last layer holds the values at T.
    """

    t_nodes: np.ndarray
    x_nodes: np.ndarray
    v: np.ndarray
    dv: np.ndarray
    d2v: np.ndarray
    a_star: np.ndarray
    gamma_hat: np.ndarray
    clamp_stats: dict = field(default_factory=dict)
    cfl_ratio: float = 0.0

    @property
    def dt(self):
        return float(self.t_nodes[1] - self.t_nodes[0])

    @property
    def dx(self):
        return float(self.x_nodes[1] - self.x_nodes[0])

    @property
    def n_steps(self):
        return len(self.t_nodes) - 1

    @property
    def maturity(self):
        return float(self.t_nodes[-1])

    def interp(self, name, k, points):
        """Linear interpolation of field `name` on layer k"""
        return linear(self.x_nodes, getattr(self, name)[k], points)

    def value_at(self, x, k=0):
        return float(self.interp('v', k, x))

    def gradient_at(self, x, k=0):
        return float(self.interp('dv', k, x))

    def to_frame(self, every=1):
        """Long table with columns t,x,v,dv,d2v,a_star,gamma_hat"""
        rows = np.arange(0, len(self.t_nodes), max(int(every), 1))
        if rows[-1] != len(self.t_nodes) - 1:
            rows = np.append(rows, len(self.t_nodes) - 1)
        tt, xx = np.meshgrid(self.t_nodes[rows], self.x_nodes, indexing='ij')
        return pd.DataFrame({
            't': tt.ravel(),
            'x': xx.ravel(),
            'v': self.v[rows].ravel(),
            'dv': self.dv[rows].ravel(),
            'd2v': self.d2v[rows].ravel(),
            'a_star': self.a_star[rows].ravel(),
            'gamma_hat': self.gamma_hat[rows].ravel(),
        })

    def save(self, path):
        os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
        joblib.dump(self, path)

    @staticmethod
    def load(path):
        surface = joblib.load(path)
        if not isinstance(surface, ValueSurface):
            raise DomainError(f"{path} does not hold a ValueSurface")
        return surface


def _interior_max_curvature(terminal, dx):
    return max(float(np.max(second_difference(terminal, dx))), 0.0)


def _argmax_bound(model, x_nodes, maturity, z_cap):
    # coefficient families do not vary in t, five sample times are enough
    tt, xx = np.meshgrid(np.linspace(0.0, maturity, 5), x_nodes, indexing='ij')
    return float(np.max(model.argmax_bound(tt, xx, z_cap)))


def check_cfl(model, grid, terminal):
    """
    Monotonicity precondition a_max^2 dt / dx^2 <= 1

    The scheme never raises the largest discrete curvature above that of the
    terminal data (or 0, the boundary value), so the Fenchel argmax is bounded
    by its value at that curvature, capped at the clamp level.
    """
    z_cap = _interior_max_curvature(np.asarray(terminal, dtype=float), grid.dx)
    a_bound = _argmax_bound(model, grid.x_nodes, grid.maturity, z_cap)
    ratio = a_bound ** 2 * grid.dt / grid.dx ** 2
    return {
        'terminal_curvature': z_cap,
        'a_bound': a_bound,
        'ratio': float(ratio),
        'ok': bool(ratio <= 1.0 + CFL_TOLERANCE),
    }


def stable_steps(model, x_nodes, maturity, terminal, safety=1.0):
    """Smallest number of time steps meeting the monotonicity precondition"""
    x_nodes = np.asarray(x_nodes, dtype=float)
    dx = float(x_nodes[1] - x_nodes[0])
    z_cap = _interior_max_curvature(np.asarray(terminal, dtype=float), dx)
    a_bound = _argmax_bound(model, x_nodes, maturity, z_cap)
    return max(int(np.ceil(maturity * a_bound ** 2 / (safety * dx ** 2) - CFL_TOLERANCE)), 1)


def solve(model, terminal, grid, clamp_fraction=0.05, strict=False, store_every=1):
    """
    Backward explicit scheme v_k = v_{k+1} + dt * Fbar(t_k, x, min(D2 v_{k+1}, gamma2 - eps))

    Args:
        model: ImpactModel
        terminal: face-lifted payoff on grid.x_nodes
        grid: SolverGrid
        clamp_fraction: largest tolerated share of clamped interior nodes per layer
        strict: escalate clamp over-activation to NumericalHealthError
        store_every: keep every n-th time layer (must divide the number of steps)

    Returns:
        ValueSurface
    """
    terminal = np.asarray(terminal, dtype=float)
    xs = grid.x_nodes
    if terminal.shape != xs.shape:
        raise DomainError(f"terminal has shape {terminal.shape}, grid has {len(xs)} nodes")
    store_every = int(store_every)
    if store_every < 1 or grid.n_steps % store_every:
        raise PreconditionError(f"store_every={store_every} must divide the {grid.n_steps} time steps")

    cfl = check_cfl(model, grid, terminal)
    if not cfl['ok']:
        raise PreconditionError(
            f"CFL violated: a_bound^2 dt / dx^2 = {cfl['ratio']:.4f} > 1 "
            f"(a_bound={cfl['a_bound']:.4g}); use at least "
            f"{stable_steps(model, xs, grid.maturity, terminal)} time steps")

    dt, dx = grid.dt, grid.dx
    n_keep = grid.n_steps // store_every + 1
    shape = (n_keep, len(xs))
    v, dv, d2v = np.empty(shape), np.empty(shape), np.empty(shape)
    a_star, gamma_hat = np.empty(shape), np.empty(shape)

    current = terminal.copy()
    z = second_difference(current, dx)
    T = grid.maturity
    cap = np.broadcast_to(model.clamp_level(T, xs), xs.shape)
    zc = np.minimum(z, cap)
    _, a_T = model.fenchel(T, xs, zc)
    v[-1], dv[-1], d2v[-1] = current, np.gradient(current, dx), z
    a_star[-1], gamma_hat[-1] = a_T, zc

    interior = len(xs) - 2
    clamped_total = 0
    worst_layer = 0.0
    realized = 0.0
    for k in range(grid.n_steps - 1, -1, -1):
        t = grid.t_nodes[k]
        cap = np.broadcast_to(model.clamp_level(t, xs), xs.shape)
        active = z[1:-1] > cap[1:-1]
        n_active = int(np.count_nonzero(active))
        clamped_total += n_active
        worst_layer = max(worst_layer, n_active / max(interior, 1))
        zc = np.minimum(z, cap)
        value, argmax = model.fenchel(t, xs, zc)
        realized = max(realized, float(np.max(argmax)) ** 2 * dt / dx ** 2)
        layer_a, layer_gamma = argmax, zc

        current = current + dt * value
        z = second_difference(current, dx)
        if k % store_every == 0:
            i = k // store_every
            v[i], dv[i], d2v[i] = current, np.gradient(current, dx), z
            a_star[i], gamma_hat[i] = layer_a, layer_gamma
        logger.debug("layer t=%.6f max a*=%.6g clamped=%d", t, float(np.max(argmax)), n_active)

    if realized > 1.0 + CFL_TOLERANCE:
        raise PreconditionError(f"realized CFL ratio {realized:.4f} exceeds 1; refine the time grid")

    clamp_stats = {
        'clamped_node_steps': clamped_total,
        'clamped_share': clamped_total / max(interior * grid.n_steps, 1),
        'worst_layer_share': worst_layer,
        'threshold': clamp_fraction,
    }
    if worst_layer > clamp_fraction:
        message = (f"clamp active on {worst_layer:.1%} of interior nodes in some layer "
                   f"(threshold {clamp_fraction:.1%}); terminal data may not be face-lifted")
        if strict:
            raise NumericalHealthError(message)
        logger.warning(message)

    return ValueSurface(t_nodes=grid.t_nodes[::store_every].copy(), x_nodes=xs.copy(),
                        v=v, dv=dv, d2v=d2v, a_star=a_star, gamma_hat=gamma_hat,
                        clamp_stats=clamp_stats, cfl_ratio=realized)


def diagnostics(vs, model, tol=1e-6, growth_bound=None):
    """
    Violation report for the provable value-function laws

    Returns:
        Dict of non-negative violation measures (0 means the law holds) plus
        the fitted growth constant, curvature consistency and clamp statistics
    """
    tt, xx = np.meshgrid(vs.t_nodes, vs.x_nodes, indexing='ij')
    growth_constant = float(np.max(np.abs(vs.v) / (1.0 + np.abs(xx))))
    growth_violation = 0.0
    if growth_bound is not None:
        growth_violation = float(np.max(np.maximum(np.abs(vs.v) - growth_bound * (1.0 + np.abs(xx)), 0.0)))

    rate = float(np.max(model.running_cost_G(tt, xx, 0.0))) + tol
    steps = np.diff(vs.t_nodes)[:, None]
    monotonicity = float(np.max(np.maximum(vs.v[1:] - vs.v[:-1] - rate * steps, 0.0)))

    concavity = float(np.max(np.maximum(vs.d2v[:, 1:-1] - 2.0 * model.c_upper - tol, 0.0)))
    parabolicity = float(np.max(np.maximum(vs.d2v - model.clamp_level(tt, xx), 0.0)))

    # layers with t <= T/2; the first steps inherit the curvature jumps of the payoff
    early = vs.t_nodes[:-1] <= 0.5 * vs.maturity
    consistency = float(np.max(np.abs(vs.gamma_hat[:-1][early, 1:-1] - vs.d2v[:-1][early, 1:-1])))

    return {
        'growth_constant': growth_constant,
        'growth_violation': growth_violation,
        'monotonicity_rate': rate,
        'monotonicity_violation': monotonicity,
        'concavity_violation': concavity,
        'parabolicity_violation': parabolicity,
        'max_d2v': float(np.max(vs.d2v)),
        'gamma_consistency': consistency,
        'cfl_ratio': vs.cfl_ratio,
        'clamp': dict(vs.clamp_stats),
    }


def comparison_bounds(vs, model, phi_hat, n_layers=51):
    """
    Gaps to the two control lower bounds (non-negative up to discretisation error)

    zero_cost_gap: v - E[phi_hat(x + sigma0 W_{T-t})], the alpha = sigma0 control,
    only for constant coefficients; evaluated on at most n_layers evenly spread layers.
    idle_gap: v - phi_hat + (T - t) sup G(., 0), the alpha = 0 control.
    """
    phi_hat = np.asarray(phi_hat, dtype=float)
    tau = vs.maturity - vs.t_nodes
    tt, xx = np.meshgrid(vs.t_nodes, vs.x_nodes, indexing='ij')
    idle_rate = float(np.max(model.running_cost_G(tt, xx, 0.0)))
    idle_gap = vs.v - (phi_hat[None, :] - tau[:, None] * idle_rate)
    report = {'idle_gap': float(np.min(idle_gap)), 'zero_cost_gap': None}
    if not model.state_dependent:
        sigma0 = float(model.sigma0(0.0, vs.x_nodes[0]))
        rows = np.unique(np.linspace(0, len(tau) - 1, min(len(tau), n_layers)).astype(int))
        bachelier = np.stack([piecewise_linear_expectation(vs.x_nodes, phi_hat, vs.x_nodes, sigma0, tau[k])
                              for k in rows])
        report['zero_cost_gap'] = float(np.min(vs.v[rows] - bachelier))
    return report


def refinement_study(model, terminal_fn, x_min, x_max, n_x, n_steps, x0, levels=3):
    """
    Solve under successive refinement dx -> dx/2, dt -> dt/4

    Args:
        terminal_fn: map price grid -> face-lifted terminal values on that grid
        levels: number of resolutions

    Returns:
        List of per-level dicts (dx, dt, v0, gamma_consistency) and the successive
        differences of v(0, x0) with their ratios
    """
    rows = []
    for level in range(levels):
        nx = (int(n_x) - 1) * 2 ** level + 1
        nt = int(n_steps) * 4 ** level
        grid = SolverGrid.uniform(x_min, x_max, nx, model.maturity, nt)
        surface = solve(model, terminal_fn(grid.x_nodes), grid, store_every=4 ** level)
        report = diagnostics(surface, model)
        rows.append({'dx': grid.dx, 'dt': grid.dt, 'v0': surface.value_at(x0),
                     'gamma_consistency': report['gamma_consistency']})
        logger.info("refinement level %d: dx=%.3g dt=%.3g v0=%.8f", level, grid.dx, grid.dt, rows[-1]['v0'])
    differences = [abs(a['v0'] - b['v0']) for a, b in zip(rows[:-1], rows[1:])]
    ratios = [d0 / d1 if d1 > 0 else float('inf') for d0, d1 in zip(differences[:-1], differences[1:])]
    return {'levels': rows, 'differences': differences, 'ratios': ratios}
