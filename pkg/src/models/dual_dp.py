"""
Dual DP
Markov-chain dynamic programming for the dual control problem: a martingale binomial
step x -> x +/- a sqrt(dt) per control a, optionally augmented with the running
average of an Asian payoff
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .errors import DomainError, PreconditionError
from .facelift import facelift, facelift_table
from .interpolation import linear, linear_2d, outside

logger = logging.getLogger(__name__)

# Philox stream id of the budget simulation, clear of the hedge block ids
BUDGET_STREAM = 2 ** 62


@dataclass(frozen=True)
class ControlGrid:
    """Sorted admissible volatilities in [0, a_max]; sigma0 is added per node at solve time"""

    a_values: np.ndarray
    include_sigma0: bool = True

    def __post_init__(self):
        a_values = np.unique(np.asarray(self.a_values, dtype=float))
        if len(a_values) == 0 or a_values[0] < 0:
            raise DomainError("control grid must be non-empty and non-negative")
        if a_values[0] != 0.0:
            a_values = np.concatenate([[0.0], a_values])
        object.__setattr__(self, 'a_values', a_values)

    @classmethod
    def linspace(cls, a_max, n_controls, include_sigma0=True):
        if a_max <= 0 or n_controls < 2:
            raise DomainError(f"control grid needs a_max > 0 and >= 2 controls, got {a_max}, {n_controls}")
        return cls(np.linspace(0.0, a_max, int(n_controls)), include_sigma0)

    @property
    def a_max(self):
        return float(self.a_values[-1])

    @property
    def spacing(self):
        return float(np.max(np.diff(self.a_values))) if len(self.a_values) > 1 else 0.0


@dataclass(frozen=True)
class DPGrids:
    """Time grid, price grid, control grid and (Asian only) the number of average nodes"""

    t_nodes: np.ndarray
    x_nodes: np.ndarray
    controls: ControlGrid
    n_m: int = 1

    def __post_init__(self):
        t_nodes = np.asarray(self.t_nodes, dtype=float)
        x_nodes = np.asarray(self.x_nodes, dtype=float)
        if len(t_nodes) < 2 or len(x_nodes) < 2:
            raise DomainError("DP grids need at least 2 time and 2 price nodes")
        if np.any(np.diff(t_nodes) <= 0) or np.any(np.diff(x_nodes) <= 0):
            raise DomainError("DP grids must be strictly increasing")
        if self.n_m < 1:
            raise DomainError("n_m must be at least 1")
        object.__setattr__(self, 't_nodes', t_nodes)
        object.__setattr__(self, 'x_nodes', x_nodes)

    @classmethod
    def uniform(cls, x_min, x_max, n_x, maturity, n_steps, a_max, n_controls, n_m=None):
        return cls(t_nodes=np.linspace(0.0, maturity, int(n_steps) + 1),
                   x_nodes=np.linspace(x_min, x_max, int(n_x)),
                   controls=ControlGrid.linspace(a_max, n_controls),
                   n_m=int(n_m) if n_m else int(n_x))

    @property
    def dt(self):
        return float(self.t_nodes[1] - self.t_nodes[0])

    @property
    def dx(self):
        return float(self.x_nodes[1] - self.x_nodes[0])

    def m_nodes(self, payoff):
        """Average grids per time node; a single node 0 while no mass has accrued"""
        cumulative = np.concatenate([[0.0], np.cumsum(payoff.density_masses(self.t_nodes))])
        grids = []
        for W in cumulative:
            if payoff.is_markovian or W <= 0:
                grids.append(np.zeros(1))
                continue
            lo, hi = sorted((self.x_nodes[0] * W, self.x_nodes[-1] * W))
            grids.append(np.linspace(lo, hi, self.n_m))
        return grids


@dataclass
class DPSolution:
    """Value and policy tables; value[k] has shape (n_x, n_m_k), policy[k] the control over [t_k, t_{k+1})"""

    t_nodes: np.ndarray
    x_nodes: np.ndarray
    m_nodes: list
    value: list
    policy: list
    extrapolation: dict = field(default_factory=dict)

    @property
    def markovian(self):
        return all(len(m) == 1 for m in self.m_nodes)

    def value_at(self, x, k=0, m=0.0):
        if len(self.m_nodes[k]) == 1:
            return float(linear(self.x_nodes, self.value[k][:, 0], x))
        return float(linear_2d(self.x_nodes, self.m_nodes[k], self.value[k], x, m))

    def policy_at(self, x, k, m=0.0):
        if len(self.m_nodes[k]) == 1:
            return linear(self.x_nodes, self.policy[k][:, 0], x)
        return linear_2d(self.x_nodes, self.m_nodes[k], self.policy[k], x, m)

    def to_frame(self, every=1):
        """Long table t,x[,m],v,a_star (a_star empty at maturity)"""
        frames = []
        n = len(self.t_nodes)
        rows = sorted(set(range(0, n, max(int(every), 1))) | {n - 1})
        for k in rows:
            xx, mm = np.meshgrid(self.x_nodes, self.m_nodes[k], indexing='ij')
            a_star = self.policy[k] if k < n - 1 else np.full(xx.shape, np.nan)
            frame = {'t': np.full(xx.size, self.t_nodes[k]), 'x': xx.ravel()}
            if not self.markovian:
                frame['m'] = mm.ravel()
            frame['v'] = self.value[k].ravel()
            frame['a_star'] = a_star.ravel()
            frames.append(pd.DataFrame(frame))
        return pd.concat(frames, ignore_index=True)


def _control_matrix(model, controls, t, xs):
    a = np.broadcast_to(controls.a_values, (len(xs), len(controls.a_values)))
    if controls.include_sigma0:
        s0 = np.broadcast_to(model.sigma0(t, xs), xs.shape)[:, None]
        a = np.concatenate([a, s0], axis=1)
    return a


def _backward(model, payoff, t_nodes, xs, controls, m_grids, terminal_table):
    """Backward recursion over t_nodes; returns values, policies and exit counts per layer"""
    n = len(t_nodes) - 1
    masses = payoff.density_masses(t_nodes) if not payoff.is_markovian else np.zeros(n)
    values = [None] * (n + 1)
    policies = [None] * n
    values[n] = terminal_table
    exits = np.zeros(n, dtype=int)
    clipped = 0

    for k in range(n - 1, -1, -1):
        t = t_nodes[k]
        dt = t_nodes[k + 1] - t
        A = _control_matrix(model, controls, t, xs)
        step = A * np.sqrt(dt)
        up = xs[:, None] + step
        down = xs[:, None] - step
        cost = model.running_cost_G(t, xs[:, None], A) * dt
        nxt = values[k + 1]
        m_here, m_next = m_grids[k], m_grids[k + 1]

        if len(m_next) == 1:
            cont = 0.5 * (linear(xs, nxt[:, 0], up) + linear(xs, nxt[:, 0], down)) - cost
            best = np.argmax(cont, axis=1)
            rows = np.arange(len(xs))
            table = np.broadcast_to(cont[rows, best][:, None], (len(xs), len(m_here))).copy()
            chosen = np.broadcast_to(A[rows, best][:, None], (len(xs), len(m_here))).copy()
            exit_mask = outside(xs, up[rows, best]) | outside(xs, down[rows, best])
            exits[k] = int(np.count_nonzero(exit_mask)) * len(m_here)
        else:
            table = np.empty((len(xs), len(m_here)))
            chosen = np.empty((len(xs), len(m_here)))
            n_exit = 0
            for j, m in enumerate(m_here):
                m_new = m + xs * masses[k]
                lo, hi = m_next[0], m_next[-1]
                span = max(abs(lo), abs(hi), 1.0)
                off = (m_new < lo - 1e-12 * span) | (m_new > hi + 1e-12 * span)
                clipped += int(np.count_nonzero(off))
                m_new = np.clip(m_new, lo, hi)
                m_mat = np.broadcast_to(m_new[:, None], up.shape)
                cont = 0.5 * (linear_2d(xs, m_next, nxt, up, m_mat)
                              + linear_2d(xs, m_next, nxt, down, m_mat)) - cost
                best = np.argmax(cont, axis=1)
                rows = np.arange(len(xs))
                table[:, j] = cont[rows, best]
                chosen[:, j] = A[rows, best]
                n_exit += int(np.count_nonzero(outside(xs, up[rows, best]) | outside(xs, down[rows, best])))
            exits[k] = n_exit
        values[k] = table
        policies[k] = chosen
        logger.debug("dp layer t=%.6f max a*=%.6g exits=%d", t, float(np.max(chosen)), exits[k])
    return values, policies, exits, clipped


def _terminal_table(model, payoff, xs, m_last, terminal):
    if terminal is not None:
        terminal = np.asarray(terminal, dtype=float)
        if terminal.ndim == 1:
            terminal = terminal[:, None]
        if terminal.shape != (len(xs), len(m_last)):
            raise DomainError(f"terminal table has shape {terminal.shape}, "
                              f"expected {(len(xs), len(m_last))}")
        return terminal
    if payoff.is_markovian:
        _, phi_hat, _ = facelift(model, payoff, xs)
        return phi_hat[:, None]
    return facelift_table(model, xs, payoff.augmented_terminal(xs, m_last))


def solve_dp(model, payoff, grids, terminal=None, max_extrapolation=0.2):
    """
    Backward dynamic programme
    v_k(s) = max_a { (v_{k+1}(s+) + v_{k+1}(s-)) / 2 - G(t_k, x, a) dt }

    Args:
        model: ImpactModel
        payoff: PayoffSpec (Markovian or Asian)
        grids: DPGrids
        terminal: optional terminal table; defaults to the face-lifted payoff
                  (Markovian) or phi(m + atom * x, x) (Asian)
        max_extrapolation: largest tolerated share of nodes whose optimal branch
                           leaves the price grid in any layer

    Returns:
        DPSolution
    """
    xs = grids.x_nodes
    m_grids = grids.m_nodes(payoff)
    table = _terminal_table(model, payoff, xs, m_grids[-1], terminal)
    values, policies, exits, clipped = _backward(model, payoff, grids.t_nodes, xs, grids.controls,
                                                 m_grids, table)
    report = _extrapolation_report(exits, m_grids, len(xs), clipped)
    if report['worst_layer_share'] > max_extrapolation:
        raise PreconditionError(
            f"{report['worst_layer_share']:.1%} of nodes leave the price grid in some layer "
            f"(threshold {max_extrapolation:.1%}); widen the domain")
    saturated = float(np.mean(np.concatenate([p.ravel() for p in policies]) >= grids.controls.a_max))
    report['saturated_share'] = saturated
    if saturated > 0:
        logger.warning("optimal control saturates a_max=%.4g on %.2f%% of nodes",
                       grids.controls.a_max, 100 * saturated)
    return DPSolution(t_nodes=grids.t_nodes, x_nodes=xs, m_nodes=m_grids,
                      value=values, policy=policies, extrapolation=report)


def _extrapolation_report(exits, m_grids, n_x, clipped):
    sizes = np.array([n_x * len(m) for m in m_grids[:-1]])
    shares = exits / sizes
    return {
        'exits': int(np.sum(exits)),
        'share': float(np.sum(exits) / np.sum(sizes)),
        'worst_layer_share': float(np.max(shares)) if len(shares) else 0.0,
        'clipped_average': clipped,
    }


def check_dpp(model, payoff, grids, t_split, terminal=None, regrid=True, max_extrapolation=0.2):
    """
    Dynamic programming residual: solve on [t_split, T], feed the t_split layer as
    terminal data to a solve on [0, t_split], compare with the one-shot solve at t = 0

    With regrid the intermediate layer is moved to a half-shifted price grid, so the
    residual measures interpolation error instead of being zero by construction.

    Returns:
        Dict with the max-abs residual at t = 0 and the split index
    """
    t_nodes = grids.t_nodes
    s = int(np.argmin(np.abs(t_nodes - t_split)))
    if abs(t_nodes[s] - t_split) > 1e-12 * max(t_nodes[-1], 1.0):
        raise PreconditionError(f"t_split={t_split} is not on the DP time grid")
    if s == len(t_nodes) - 1:
        return {'residual': 0.0, 'split_index': s, 't_split': float(t_split), 'regrid': regrid}

    xs = grids.x_nodes
    m_grids = grids.m_nodes(payoff)
    table = _terminal_table(model, payoff, xs, m_grids[-1], terminal)
    one_shot, _, _, _ = _backward(model, payoff, t_nodes, xs, grids.controls, m_grids, table)
    late, _, _, _ = _backward(model, payoff, t_nodes[s:], xs, grids.controls, m_grids[s:], table)
    middle = late[0]

    xs_stage = xs
    if regrid:
        xs_stage = xs[:-1] + 0.5 * np.diff(xs)
        middle = linear(xs, middle.T, xs_stage).T
    early, _, _, _ = _backward(model, payoff, t_nodes[:s + 1], xs_stage, grids.controls,
                               m_grids[:s + 1], middle)
    first = early[0]
    if regrid:
        first = linear(xs_stage, first.T, xs).T

    # two cells at each edge carry extrapolation error of the shifted grid
    inner = slice(2, -2) if regrid and len(xs) > 6 else slice(None)
    residual = float(np.max(np.abs(first[inner] - one_shot[0][inner])))
    logger.info("DPP residual at t_split=%.4f: %.3e", t_split, residual)
    return {'residual': residual, 'split_index': s, 't_split': float(t_split), 'regrid': regrid}


def forward_budget(solution, model, n_paths, seed, x0):
    """
    E[sum a_k^2 dt] along the DP policy by forward simulation of the binomial chain

    Returns:
        Dict with mean, standard error and the share of paths leaving the grid
    """
    if not solution.markovian:
        raise DomainError("forward_budget supports Markovian solutions only")
    rng = np.random.Generator(np.random.Philox(key=[int(seed), BUDGET_STREAM]))
    t_nodes = solution.t_nodes
    x = np.full(int(n_paths), float(x0))
    budget = np.zeros_like(x)
    left = np.zeros(len(x), dtype=bool)
    for k in range(len(t_nodes) - 1):
        dt = t_nodes[k + 1] - t_nodes[k]
        a = np.maximum(solution.policy_at(x, k), 0.0)
        budget += a ** 2 * dt
        signs = rng.choice([-1.0, 1.0], size=len(x))
        x = x + signs * a * np.sqrt(dt)
        left |= outside(solution.x_nodes, x)
    se = float(np.std(budget, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0
    return {'mean': float(np.mean(budget)), 'standard_error': se,
            'exit_share': float(np.mean(left)), 'n_paths': int(n_paths)}


def dp_grids_from_config(dp_cfg, grid_cfg, maturity, a_max: Optional[float] = None):
    """DPGrids from the dp and grid config blocks"""
    return DPGrids.uniform(grid_cfg.x_min, grid_cfg.x_max, dp_cfg.n_x, maturity, dp_cfg.n_t,
                           a_max if a_max is not None else dp_cfg.a_max, dp_cfg.n_controls,
                           dp_cfg.n_m or dp_cfg.n_x)
