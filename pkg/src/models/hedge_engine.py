"""
Hedge Engine
Monte Carlo reconstruction of the perfect hedge: simulate the price under the optimal
feedback volatility, roll the self-financing portfolio forward and measure replication
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .errors import DomainError, NumericalHealthError, PreconditionError
from .interpolation import outside
from .scaling import fit_rate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    """
    Monte Carlo settings

    Paths are split into fixed-size blocks; block b draws from a Philox stream
    keyed by (seed, b), so results do not depend on n_jobs.
    """

    n_paths: int
    n_steps: int
    seed: int
    antithetic: bool = True
    n_jobs: int = 1
    block_size: int = 1024
    record_paths: int = 16
    constant_control: Optional[float] = None
    max_exit_share: float = 0.01

    def __post_init__(self):
        if self.n_paths < 2 or self.n_steps < 1:
            raise DomainError(f"need n_paths >= 2 and n_steps >= 1, got {self.n_paths}, {self.n_steps}")
        if self.seed < 0:
            raise DomainError("seed must be non-negative")
        if self.block_size < 2:
            raise DomainError("block_size must be at least 2")
        if self.antithetic and (self.n_paths % 2 or self.block_size % 2):
            raise DomainError("antithetic sampling needs even n_paths and block_size")
        if self.constant_control is not None and self.constant_control <= 0:
            raise DomainError("constant_control must be positive")

    def blocks(self):
        """(block_id, first_path, size) triples"""
        out = []
        for b, start in enumerate(range(0, self.n_paths, self.block_size)):
            out.append((b, start, min(self.block_size, self.n_paths - start)))
        return out


@dataclass
class HedgeLedger:
    """
    Replication results

    Terminal arrays hold the retained paths (paths whose antithetic pair left
    the domain are dropped together). Per-step arrays are averages over those paths.
    """

    t_nodes: np.ndarray
    v0: float
    y0: float
    x_T: np.ndarray
    v_T: np.ndarray
    payoff: np.ndarray
    error: np.ndarray
    cost: np.ndarray
    gap: Optional[np.ndarray]
    error_units: np.ndarray
    step_b_resid: np.ndarray
    step_dx: np.ndarray
    martingale_mean: np.ndarray
    martingale_se: np.ndarray
    tracking: np.ndarray
    n_paths: int
    n_excluded: int
    n_exited: int
    min_control: float
    paths: dict = field(default_factory=dict)
    constant_control: Optional[float] = None

    @property
    def exit_share(self):
        return self.n_exited / self.n_paths

    @property
    def error_se(self):
        units = self.error_units
        return float(np.std(units, ddof=1) / np.sqrt(len(units))) if len(units) > 1 else float('inf')

    def summary(self):
        e = self.error
        out = {
            'n_paths': self.n_paths,
            'n_steps': len(self.t_nodes) - 1,
            'n_excluded': self.n_excluded,
            'exit_share': self.exit_share,
            'v0': self.v0,
            'y0': self.y0,
            'error_mean': float(np.mean(e)),
            'error_se': self.error_se,
            'error_std': float(np.std(e)),
            'error_abs_mean': float(np.mean(np.abs(e))),
            'error_quantiles': {str(q): float(np.quantile(e, q)) for q in (0.01, 0.05, 0.5, 0.95, 0.99)},
            'cost_mean': float(np.mean(self.cost)),
            'cost_min': float(np.min(self.cost)),
            'b_resid_abs_mean': float(np.mean(self.step_b_resid)),
            'dx_abs_mean': float(np.mean(self.step_dx)),
            'tracking_max': float(np.max(self.tracking)),
        }
        if self.gap is not None:
            out['superhedge_gap_mean'] = float(np.mean(self.gap))
            out['superhedge_gap_min'] = float(np.min(self.gap))
        return out


def _stride(vs, cfg):
    if vs.n_steps % cfg.n_steps:
        raise PreconditionError(f"surface has {vs.n_steps} time steps, not an integer multiple "
                                f"of n_steps={cfg.n_steps}")
    return vs.n_steps // cfg.n_steps


def _normals(cfg, block_id, size):
    rng = np.random.Generator(np.random.Philox(key=[cfg.seed, block_id]))
    if not cfg.antithetic:
        return rng.standard_normal((size, cfg.n_steps))
    half = rng.standard_normal((size // 2, cfg.n_steps))
    return np.concatenate([half, -half], axis=0)


def _partner_mask(valid, antithetic):
    if not antithetic:
        return valid
    half = len(valid) // 2
    both = valid[:half] & valid[half:]
    return np.concatenate([both, both])


def _units(values, keep, antithetic):
    """Independent sampling units: antithetic pair averages, or single paths"""
    if not antithetic:
        return values[keep]
    half = len(keep) // 2
    pair_keep = keep[:half]
    return 0.5 * (values[:half][pair_keep] + values[half:][pair_keep])


def _simulate_block(vs, model, cfg, stride, block_id, start, size, x0, payoff):
    n = cfg.n_steps
    dt = vs.maturity / n
    sqdt = np.sqrt(dt)
    xi = _normals(cfg, block_id, size)
    xs = vs.x_nodes

    X = np.full(size, float(x0))
    V = np.full(size, vs.value_at(x0))
    cost = np.zeros(size)
    exited = np.zeros(size, dtype=bool)
    n_rec = max(min(cfg.record_paths - start, size), 0)

    M = np.empty((size, n + 1))
    track = np.empty((size, n + 1))
    b_abs = np.empty((size, n))
    dx_abs = np.empty((size, n))
    rec = {name: np.empty((n_rec, n + 1)) for name in ('x', 'v_rollout', 'v_surface', 'y')}
    rec.update({name: np.empty((n_rec, n)) for name in ('a', 'gamma', 'b_resid', 'cost')})
    min_control = np.inf

    y = vs.interp('dv', 0, X)
    for k in range(n):
        t = k * dt
        layer = k * stride
        if cfg.constant_control is not None:
            a = np.full(size, cfg.constant_control)
        else:
            a = vs.interp('a_star', layer, X)
        min_control = min(min_control, float(np.min(a)))
        v_s = vs.interp('v', layer, X)
        g = model.running_cost_G(t, X, np.maximum(a, 0.0))
        gam = model.sigma_inverse(t, X, np.maximum(a, 0.0))

        M[:, k] = v_s - cost
        track[:, k] = np.abs(V - v_s)
        if n_rec:
            rec['x'][:, k], rec['v_rollout'][:, k] = X[:n_rec], V[:n_rec]
            rec['v_surface'][:, k], rec['y'][:, k] = v_s[:n_rec], y[:n_rec]

        dX = a * sqdt * xi[:, k]
        X_new = X + dX
        V = V + y * dX + g * dt
        cost = cost + g * dt
        y_next = vs.interp('dv', layer + stride, X_new)
        b = y + gam * dX - y_next
        b_abs[:, k] = np.abs(b)
        dx_abs[:, k] = np.abs(dX)
        exited |= outside(xs, X_new)

        if n_rec:
            rec['a'][:, k], rec['gamma'][:, k] = a[:n_rec], gam[:n_rec]
            rec['b_resid'][:, k], rec['cost'][:, k] = b[:n_rec], g[:n_rec] * dt
        X, y = X_new, y_next

    phi_hat = vs.interp('v', -1, X)
    M[:, n] = phi_hat - cost
    track[:, n] = np.abs(V - phi_hat)
    if n_rec:
        rec['x'][:, n], rec['v_rollout'][:, n] = X[:n_rec], V[:n_rec]
        rec['v_surface'][:, n], rec['y'][:, n] = phi_hat[:n_rec], y[:n_rec]

    keep = _partner_mask(~exited, cfg.antithetic)
    error = V - phi_hat
    gap = V - payoff.terminal_values(X) if payoff is not None and payoff.is_markovian else None
    return {
        'x_T': X[keep], 'v_T': V[keep], 'payoff': phi_hat[keep], 'error': error[keep],
        'cost': cost[keep], 'gap': gap[keep] if gap is not None else None,
        'error_units': _units(error, keep, cfg.antithetic),
        'M_units': _units(M, keep, cfg.antithetic),
        'b_sum': b_abs[keep].sum(axis=0), 'dx_sum': dx_abs[keep].sum(axis=0),
        'track_sum': track[keep].sum(axis=0),
        'kept': int(np.count_nonzero(keep)), 'exited': int(np.count_nonzero(exited)),
        'min_control': min_control, 'rec': rec, 'n_rec': n_rec,
    }


def simulate_optimal(vs, model, cfg, x0, payoff=None, strict=True):
    """
    Simulate X_{k+1} = X_k + a*(t_k, X_k) sqrt(dt) xi_k and the portfolio
    V_{k+1} = V_k + Y_k dX_k + G(t_k, X_k, a*_k) dt with Y_k = dv(t_k, X_k)

    Args:
        vs: ValueSurface whose time steps are a multiple of cfg.n_steps
        model: ImpactModel
        cfg: SimConfig
        x0: initial price
        payoff: original (unlifted) PayoffSpec, for the super-hedging gap
        strict: raise when more than cfg.max_exit_share of paths leave the domain

    Returns:
        HedgeLedger
    """
    stride = _stride(vs, cfg)
    lo, hi = vs.x_nodes[0], vs.x_nodes[-1]
    if not lo < x0 < hi:
        raise PreconditionError(f"x0={x0} outside the surface domain [{lo}, {hi}]")

    blocks = Parallel(n_jobs=cfg.n_jobs)(
        delayed(_simulate_block)(vs, model, cfg, stride, b, start, size, x0, payoff)
        for b, start, size in cfg.blocks())

    kept = sum(blk['kept'] for blk in blocks)
    exited = sum(blk['exited'] for blk in blocks)
    if kept < 2:
        raise NumericalHealthError("fewer than 2 paths stayed inside the surface domain")
    exit_share = exited / cfg.n_paths
    if exit_share > cfg.max_exit_share:
        message = f"{exit_share:.2%} of paths left the surface domain (limit {cfg.max_exit_share:.2%})"
        if strict:
            raise NumericalHealthError(message)
        logger.warning(message)
    elif exited:
        logger.warning("%d of %d paths left the surface domain and were excluded", exited, cfg.n_paths)

    def cat(name):
        return np.concatenate([blk[name] for blk in blocks])

    M_units = np.concatenate([blk['M_units'] for blk in blocks], axis=0)
    n_units = len(M_units)
    n_rec = sum(blk['n_rec'] for blk in blocks)
    paths = {}
    if n_rec:
        paths = {name: np.concatenate([blk['rec'][name] for blk in blocks if blk['n_rec']], axis=0)
                 for name in blocks[0]['rec']}

    gaps = [blk['gap'] for blk in blocks]
    return HedgeLedger(
        t_nodes=np.linspace(0.0, vs.maturity, cfg.n_steps + 1),
        v0=vs.value_at(x0), y0=vs.gradient_at(x0),
        x_T=cat('x_T'), v_T=cat('v_T'), payoff=cat('payoff'), error=cat('error'), cost=cat('cost'),
        gap=np.concatenate(gaps) if all(g is not None for g in gaps) else None,
        error_units=cat('error_units'),
        step_b_resid=np.sum([blk['b_sum'] for blk in blocks], axis=0) / kept,
        step_dx=np.sum([blk['dx_sum'] for blk in blocks], axis=0) / kept,
        martingale_mean=M_units.mean(axis=0),
        martingale_se=M_units.std(axis=0, ddof=1) / np.sqrt(n_units),
        tracking=np.sum([blk['track_sum'] for blk in blocks], axis=0) / kept,
        n_paths=cfg.n_paths, n_excluded=cfg.n_paths - kept, n_exited=exited,
        min_control=min(blk['min_control'] for blk in blocks),
        paths=paths, constant_control=cfg.constant_control,
    )


def martingale_check(vs, model, cfg, x0, ledger=None, bias_allowance=0.0):
    """
    Drift of M_k = v(t_k, X_k) - sum_{j<k} G_j dt against v(0, x0)

    Returns:
        Dict with the largest deviation, its standard error and z-score, and the
        terminal drift z-score (negative under a suboptimal control)
    """
    if ledger is None:
        ledger = simulate_optimal(vs, model, cfg, x0)
    dev = ledger.martingale_mean - ledger.v0
    se = ledger.martingale_se
    with np.errstate(divide='ignore', invalid='ignore'):
        excess = np.where(se[1:] > 0, (np.abs(dev[1:]) - bias_allowance) / se[1:], 0.0)
    worst = int(np.argmax(np.abs(dev)))
    terminal_se = float(se[-1])
    drift_z = float(dev[-1] / terminal_se) if terminal_se > 0 else 0.0
    return {
        'v0': ledger.v0,
        'max_deviation': float(np.abs(dev[worst])),
        'max_deviation_step': worst,
        'standard_error': float(se[worst]),
        'max_z': float(np.max(np.maximum(excess, 0.0))) if len(excess) else 0.0,
        'terminal_drift': float(dev[-1]),
        'terminal_se': terminal_se,
        'drift_z': drift_z,
        'bias_allowance': bias_allowance,
        'passes': bool(np.all(excess <= 3.0)),
    }


def primal_consistency(ledger, model):
    """
    Check the change of variables alpha = sigma0 + f a and gamma = a / alpha
    on the recorded paths, and that the primal cost F(t, x, gamma) reproduces
    the running cost G(t, x, alpha) booked by the portfolio recursion

    Returns:
        Dict of worst identity errors and the count of alpha = 0 occurrences
    """
    paths = ledger.paths
    report = {'checked': 0, 'identity_error': 0.0, 'gamma_error': 0.0, 'inverse_error': 0.0,
              'cost_error': 0.0, 'zero_control_count': int(ledger.min_control <= 0.0)}
    if not paths:
        return report
    t = np.broadcast_to(ledger.t_nodes[:-1], paths['a'].shape)
    x = paths['x'][:, :-1]
    alpha = paths['a']
    g0, g1, g2 = model.coefficients(t, x)
    s0, f = g1 / g2, 1.0 / g2
    zero = alpha <= 0.0
    report['zero_control_count'] += int(np.count_nonzero(zero))
    ok = ~zero
    impact = (alpha - s0) / f
    gamma = np.where(ok, impact / np.where(ok, alpha, 1.0), -np.inf)
    inverse = model.sigma_inverse(t, x, np.maximum(alpha, 0.0))
    booked = paths['cost'] / np.diff(ledger.t_nodes)
    primal = model.primal_cost_F(t, x, np.where(ok, paths['gamma'], 0.0))
    report.update({
        'checked': int(np.count_nonzero(ok)),
        'identity_error': float(np.max(np.abs(s0 + f * impact - alpha)[ok])) if ok.any() else 0.0,
        'gamma_error': float(np.max(np.abs(gamma - paths['gamma'])[ok])) if ok.any() else 0.0,
        'inverse_error': float(np.max(np.abs(inverse - gamma)[ok])) if ok.any() else 0.0,
        'cost_error': float(np.max(np.abs(primal - booked)[ok])) if ok.any() else 0.0,
    })
    if report['zero_control_count']:
        logger.warning("zero volatility control met %d times", report['zero_control_count'])
    return report


def refinement_rates(vs, model, cfg, x0, step_counts):
    """
    Replication error, b-residual and increment size across step counts on one surface

    Returns:
        Dict with per-count measures, fitted exponents in dt and the mean|e|
        ratios between consecutive counts
    """
    rows = []
    for n in step_counts:
        ledger = simulate_optimal(vs, model, replace(cfg, n_steps=int(n)), x0)
        rows.append({
            'n_steps': int(n),
            'dt': vs.maturity / n,
            'error_abs_mean': float(np.mean(np.abs(ledger.error))),
            'b_resid_abs_mean': float(np.mean(ledger.step_b_resid)),
            'dx_abs_mean': float(np.mean(ledger.step_dx)),
        })
    dts = [r['dt'] for r in rows]
    out = {'levels': rows,
           'error_ratios': [a['error_abs_mean'] / b['error_abs_mean'] for a, b in zip(rows[:-1], rows[1:])]}
    for name in ('error_abs_mean', 'b_resid_abs_mean', 'dx_abs_mean'):
        out[f'{name}_exponent'] = fit_rate(dts, [r[name] for r in rows])['exponent']
    return out


def paths_frame(ledger, every=1):
    """Thinned dump of the recorded paths: path_id,t,x,v_rollout,v_surface,y,gamma,b_resid"""
    if not ledger.paths:
        return pd.DataFrame(columns=['path_id', 't', 'x', 'v_rollout', 'v_surface', 'y', 'gamma', 'b_resid'])
    n_rec, n_nodes = ledger.paths['x'].shape
    cols = np.arange(0, n_nodes, max(int(every), 1))
    frames = []
    for p in range(n_rec):
        gamma = np.append(ledger.paths['gamma'][p], np.nan)
        b = np.append(ledger.paths['b_resid'][p], np.nan)
        frames.append(pd.DataFrame({
            'path_id': p,
            't': ledger.t_nodes[cols],
            'x': ledger.paths['x'][p, cols],
            'v_rollout': ledger.paths['v_rollout'][p, cols],
            'v_surface': ledger.paths['v_surface'][p, cols],
            'y': ledger.paths['y'][p, cols],
            'gamma': gamma[cols],
            'b_resid': b[cols],
        }))
    return pd.concat(frames, ignore_index=True)
