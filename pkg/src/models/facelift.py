"""
Face-lift of terminal payoffs
phi_hat = (phi - Gamma)^conc + Gamma, the smallest majorant of phi whose curvature
stays below that of Gamma
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import DomainError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TerminalGrid:
    """Payoff and subtracted convex function on a strictly increasing price grid"""

    xs: np.ndarray
    phi: np.ndarray
    gamma_fn: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        gamma_fn = np.asarray(self.gamma_fn, dtype=float)
        _validate_table(xs, phi)
        if gamma_fn.shape != xs.shape or not np.all(np.isfinite(gamma_fn)):
            raise DomainError("gamma_fn must be finite and match the grid")
        object.__setattr__(self, 'xs', xs)
        object.__setattr__(self, 'phi', phi)
        object.__setattr__(self, 'gamma_fn', gamma_fn)

    @property
    def growth_constant(self):
        """Smallest C with |phi(x)| <= C (1 + |x|) on the grid"""
        return float(np.max(np.abs(self.phi) / (1.0 + np.abs(self.xs))))


def _validate_table(xs, values):
    if xs.ndim != 1 or len(xs) < 2:
        raise DomainError("envelope needs a grid of at least 2 points")
    if values.shape != xs.shape:
        raise DomainError(f"values shape {values.shape} does not match grid shape {xs.shape}")
    if np.any(np.diff(xs) <= 0):
        raise DomainError("grid must be strictly increasing")
    if not np.all(np.isfinite(values)):
        raise DomainError("values must be finite")


def concave_envelope(xs, values):
    """
    Upper concave hull of the points (xs, values), evaluated on xs

    Single monotone-chain pass; nodes on the hull keep their value exactly.
    """
    xs = np.asarray(xs, dtype=float)
    values = np.asarray(values, dtype=float)
    _validate_table(xs, values)

    hull = []
    for i in range(len(xs)):
        while len(hull) >= 2:
            j, k = hull[-2], hull[-1]
            # k sits on or below the chord j -> i
            if (values[k] - values[j]) * (xs[i] - xs[j]) <= (values[i] - values[j]) * (xs[k] - xs[j]):
                hull.pop()
            else:
                break
        hull.append(i)

    envelope = np.interp(xs, xs[hull], values[hull])
    return np.maximum(envelope, values)


def chord_envelope(xs, values):
    """Reference envelope: maximum over all chords spanning each node, O(n^3)"""
    xs = np.asarray(xs, dtype=float)
    values = np.asarray(values, dtype=float)
    _validate_table(xs, values)
    n = len(xs)
    out = values.copy()
    for k in range(n):
        for i in range(k + 1):
            for j in range(k, n):
                if i == j:
                    continue
                slope = (values[j] - values[i]) / (xs[j] - xs[i])
                out[k] = max(out[k], slope * (xs[k] - xs[i]) + values[i])
    return out


def facelift_payoff(tg):
    """Face-lifted payoff (phi - gamma_fn)^conc + gamma_fn on tg.xs"""
    return concave_envelope(tg.xs, tg.phi - tg.gamma_fn) + tg.gamma_fn


def build_gamma(model, xs, t=None, kind='constraint', eps_sign=-1.0):
    """
    Convex function subtracted before taking the envelope

    Args:
        model: ImpactModel
        xs: price grid
        t: time at which gamma2 is sampled (maturity by default)
        kind: 'dupire' for C0 x^2, 'constraint' for the double integral of gamma2
              shifted by eps_sign * eps_margin * x^2
        eps_sign: -1 keeps the shift as printed (curvature gamma2 - 2 eps), +1 flips it
    """
    xs = np.asarray(xs, dtype=float)
    t = model.maturity if t is None else t
    if kind == 'dupire':
        return model.c_upper * xs ** 2
    if kind == 'constraint':
        curvature = np.broadcast_to(model.gamma_bound(t, xs), xs.shape)
        slope = cumulative_trapezoid(curvature, xs, initial=0.0)
        base = cumulative_trapezoid(slope, xs, initial=0.0)
        return base + eps_sign * model.eps_margin * xs ** 2
    raise DomainError(f"unknown gamma kind '{kind}' (expected 'dupire' or 'constraint')")


def boundary_contact(xs, base, envelope, tol=1e-10):
    """
    Whether the hull lifts the nodes next to the grid edges

    A lift there means the envelope over the truncated grid differs from the
    envelope over the real line, so the domain is too narrow.
    """
    lift = np.asarray(envelope) - np.asarray(base)
    scale = tol * max(1.0, float(np.max(np.abs(base))))
    return {'left': bool(lift[1] > scale), 'right': bool(lift[-2] > scale)}


def facelift(model, payoff, xs, kind='constraint', eps_sign=-1.0):
    """
    Face-lift a Markovian payoff on a grid

    Returns:
        (TerminalGrid, phi_hat, report dict)
    """
    xs = np.asarray(xs, dtype=float)
    tg = TerminalGrid(xs=xs, phi=payoff.terminal_values(xs),
                      gamma_fn=build_gamma(model, xs, kind=kind, eps_sign=eps_sign))
    base = tg.phi - tg.gamma_fn
    envelope = concave_envelope(xs, base)
    phi_hat = envelope + tg.gamma_fn

    dx = np.diff(xs)
    second = np.diff(np.diff(phi_hat) / dx) / (0.5 * (dx[1:] + dx[:-1]))
    contact = boundary_contact(xs, base, envelope)
    report = {
        'lifted_nodes': int(np.sum(envelope - base > 1e-12 * max(1.0, float(np.max(np.abs(base)))))),
        'max_lift': float(np.max(phi_hat - tg.phi)),
        'max_second_difference': float(np.max(second)),
        'boundary_contact': contact,
        'growth_constant': tg.growth_constant,
    }
    if contact['left'] or contact['right']:
        logger.warning("face-lift hull touches the grid boundary %s; widen the domain", contact)
    return tg, phi_hat, report


def facelift_table(model, xs, table, kind='constraint', eps_sign=-1.0):
    """
    Face-lift every column of a (n_x, n_m) terminal table along the price axis

    Columns are the Asian payoff at a fixed accrued average, so a table whose
    only average is the terminal atom reproduces the Markovian face-lift.
    """
    xs = np.asarray(xs, dtype=float)
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or table.shape[0] != len(xs):
        raise DomainError(f"terminal table has shape {table.shape}, expected ({len(xs)}, n_m)")
    gamma_fn = build_gamma(model, xs, kind=kind, eps_sign=eps_sign)
    lifted = np.empty_like(table)
    for j in range(table.shape[1]):
        lifted[:, j] = concave_envelope(xs, table[:, j] - gamma_fn) + gamma_fn
    return lifted
