"""
Impact Model
Coefficients of the permanent-impact market and their closed-form transforms:
impacted volatility, its inverse, running cost G and the Fenchel transform of G
"""

import logging

import numpy as np

from .coefficients import ConstantCoefficient
from .errors import DegenerateParabolicityError, DomainError

logger = logging.getLogger(__name__)


class ImpactModel:
    """
    Permanent price impact model

    The benchmark model has impacted volatility sigma0 / (1 - f * gamma) and
    running cost G(a) = (a - sigma0)^2 / (2 f). Supplying gamma_coeffs switches
    to the general quadratic cost G(a) = gamma2 a^2 / 2 - gamma1 a + gamma0.
    Instances are not mutated after construction.
    """

    def __init__(self, sigma0, f, gamma_coeffs=None, c_upper=None, c_lower=None,
                 eps_margin=None, maturity=1.0, domain=(-10.0, 10.0)):
        """
        Initialize model

        Args:
            sigma0: Coefficient (t, x) -> unimpacted volatility, or a float
            f: Coefficient (t, x) -> impact coefficient (t is ignored by the families), or a float
            gamma_coeffs: optional triple of Coefficients (gamma0, gamma1, gamma2)
            c_upper: C0 in G <= C0 (1 + a^2); derived from the coefficients when omitted
            c_lower: C in a^2 / C - C <= G; derived when omitted
            eps_margin: parabolicity margin; defaults to 1e-3 * inf gamma2 (= 1e-3 / sup f)
            maturity: horizon T
            domain: (x_min, x_max) over which coefficient bounds are sampled
        """
        self.sigma0 = sigma0 if callable(sigma0) else ConstantCoefficient(sigma0)
        self.f = f if callable(f) else ConstantCoefficient(f)
        self.gamma_coeffs = None
        if gamma_coeffs is not None:
            if len(gamma_coeffs) != 3:
                raise DomainError("gamma_coeffs must be a triple (gamma0, gamma1, gamma2)")
            self.gamma_coeffs = tuple(c if callable(c) else ConstantCoefficient(c)
                                      for c in gamma_coeffs)
        self.maturity = float(maturity)
        self.domain = (float(domain[0]), float(domain[1]))

        limits = self.bounds()
        if limits['sigma0_inf'] <= 0 or limits['f_inf'] <= 0:
            raise DomainError("sigma0 and f must be strictly positive over the domain")
        if limits['gamma2_inf'] <= 0:
            raise DomainError("gamma2 must be strictly positive (G strictly convex in a)")
        if limits['gamma1_inf'] <= 0:
            raise DomainError("gamma1 must be strictly positive")

        self.eps_margin = float(eps_margin) if eps_margin is not None else 1e-3 * limits['gamma2_inf']
        if self.eps_margin <= 0:
            raise DomainError(f"eps_margin must be positive, got {self.eps_margin}")
        # the face-lift gamma has curvature gamma2 - 2 eps and must stay convex
        if self.eps_margin >= 0.5 * limits['gamma2_inf']:
            raise DomainError(f"eps_margin={self.eps_margin:.6g} must stay below inf gamma2 / 2 "
                              f"= {0.5 * limits['gamma2_inf']:.6g}")
        self.c_upper = float(c_upper) if c_upper is not None else limits['c_upper_derived']
        self.c_lower = float(c_lower) if c_lower is not None else limits['c_lower_derived']

    # ------------------------------------------------------------------
    # coefficients
    # ------------------------------------------------------------------
    @property
    def is_benchmark(self):
        return self.gamma_coeffs is None

    @property
    def state_dependent(self):
        coeffs = (self.sigma0, self.f) if self.is_benchmark else self.gamma_coeffs
        return any(getattr(c, 'state_dependent', True) for c in coeffs)

    def coefficients(self, t, x):
        """Quadratic cost coefficients (gamma0, gamma1, gamma2) at (t, x)"""
        if self.is_benchmark:
            s0 = self.sigma0(t, x)
            f = self.f(t, x)
            return s0 ** 2 / (2 * f), s0 / f, 1.0 / f
        g0, g1, g2 = self.gamma_coeffs
        return g0(t, x), g1(t, x), g2(t, x)

    def gamma_bound(self, t, x):
        """Curvature bound gamma2(t, x) (= 1/f for the benchmark)"""
        return self.coefficients(t, x)[2]

    def clamp_level(self, t, x):
        """Largest curvature the solvers evaluate: gamma2 - eps_margin"""
        return self.gamma_bound(t, x) - self.eps_margin

    def bounds(self, ts=None, xs=None):
        """Inf/sup of the coefficients over a sample grid, plus the derived C0 and C"""
        if ts is None:
            ts = np.linspace(0.0, self.maturity, 5)
        if xs is None:
            xs = np.linspace(self.domain[0], self.domain[1], 201)
        tt, xx = np.meshgrid(np.atleast_1d(ts), np.atleast_1d(xs), indexing='ij')
        s0 = self.sigma0(tt, xx)
        f = self.f(tt, xx)
        g0, g1, g2 = self.coefficients(tt, xx)
        return {
            'sigma0_inf': float(np.min(s0)), 'sigma0_sup': float(np.max(s0)),
            'f_inf': float(np.min(f)), 'f_sup': float(np.max(f)),
            'gamma1_inf': float(np.min(g1)), 'gamma1_sup': float(np.max(g1)),
            'gamma2_inf': float(np.min(g2)), 'gamma2_sup': float(np.max(g2)),
            'c_upper_derived': float(np.max(0.5 * g2 + 0.5 * g1 + g0)),
            'c_lower_derived': float(max(4.0 / np.min(g2), np.max(g1 ** 2 / g2), 1e-12)),
        }

    # ------------------------------------------------------------------
    # transforms
    # ------------------------------------------------------------------
    def sigma_impacted(self, t, x, gamma):
        """Impacted volatility for portfolio gamma; +inf outside the admissible set"""
        gamma = np.asarray(gamma, dtype=float)
        g0, g1, g2 = self.coefficients(t, x)
        with np.errstate(divide='ignore', invalid='ignore'):
            if self.is_benchmark:
                s0 = self.sigma0(t, x)
                fg = self.f(t, x) * gamma
                out = np.where(fg < 1.0, s0 / (1.0 - fg), np.inf)
            else:
                out = np.where(gamma < g2, g1 / (g2 - gamma), np.inf)
        return out[()] if out.ndim == 0 else out

    def sigma_inverse(self, t, x, a):
        """Gamma producing volatility a (-inf at a = 0)"""
        a = np.asarray(a, dtype=float)
        if np.any(a < 0):
            raise DomainError("sigma_inverse is defined for a >= 0 only")
        g0, g1, g2 = self.coefficients(t, x)
        safe_a = np.where(a > 0, a, 1.0)
        if self.is_benchmark:
            s0 = self.sigma0(t, x)
            out = (safe_a - s0) / (self.f(t, x) * safe_a)
        else:
            out = g2 - g1 / safe_a
        out = np.where(a > 0, out, -np.inf)
        return out[()] if out.ndim == 0 else out

    def running_cost_G(self, t, x, a):
        """Running cost G(t, x, a)"""
        a = np.asarray(a, dtype=float)
        if np.any(a < 0):
            raise DomainError("running_cost_G is defined for a >= 0 only")
        g0, g1, g2 = self.coefficients(t, x)
        if self.is_benchmark:
            f = self.f(t, x)
            out = (a - self.sigma0(t, x)) ** 2 / (2 * f)
        else:
            out = 0.5 * g2 * a ** 2 - g1 * a + g0
        out = np.asarray(out)
        return out[()] if out.ndim == 0 else out

    def dG_da(self, t, x, a):
        """Marginal cost dG/da; equals a * sigma_inverse(t, x, a)"""
        a = np.asarray(a, dtype=float)
        if np.any(a <= 0):
            raise DomainError("dG_da is defined for a > 0 only")
        if self.is_benchmark:
            out = (a - self.sigma0(t, x)) / self.f(t, x)
        else:
            g0, g1, g2 = self.coefficients(t, x)
            out = g2 * a - g1
        out = np.asarray(out)
        return out[()] if out.ndim == 0 else out

    def dG_dx(self, t, x, a):
        """Partial derivative of G in the state x (zero for constant coefficients)"""
        a = np.asarray(a, dtype=float)
        if self.is_benchmark:
            s0 = self.sigma0(t, x)
            f = self.f(t, x)
            ds0 = self.sigma0.derivative(t, x)
            df = self.f.derivative(t, x)
            out = -(a - s0) * ds0 / f - (a - s0) ** 2 * df / (2 * f ** 2)
        else:
            d0, d1, d2 = (c.derivative(t, x) for c in self.gamma_coeffs)
            out = 0.5 * d2 * a ** 2 - d1 * a + d0
        out = np.asarray(out)
        return out[()] if out.ndim == 0 else out

    def primal_cost_F(self, t, x, gamma):
        """Primal cost F(t, x, gamma) = G(t, x, sigma(t, x, gamma)); +inf outside the admissible set"""
        sigma = np.asarray(self.sigma_impacted(t, x, gamma), dtype=float)
        finite = np.isfinite(sigma)
        cost = self.running_cost_G(t, x, np.where(finite, sigma, 0.0))
        out = np.where(finite, cost, np.inf)
        return out[()] if out.ndim == 0 else out

    def fenchel(self, t, x, z):
        """
        Fenchel transform sup_a (a^2 z / 2 - G(t, x, a))

        Returns:
            (value, argmax) arrays; the argmax is strictly positive
        """
        z = np.asarray(z, dtype=float)
        g0, g1, g2 = self.coefficients(t, x)
        if np.any(z >= g2):
            raise DegenerateParabolicityError(
                "fenchel requires z < gamma2 (= 1/f); clamp or face-lift the data first")
        if self.is_benchmark:
            s0 = self.sigma0(t, x)
            denom = 1.0 - self.f(t, x) * z
            value = s0 ** 2 * z / (2 * denom)
            argmax = s0 / denom
        else:
            gap = g2 - z
            value = g1 ** 2 / (2 * gap) - g0
            argmax = g1 / gap
        value, argmax = np.asarray(value), np.asarray(argmax)
        if value.ndim == 0:
            return value[()], argmax[()]
        return value, argmax

    def argmax_bound(self, t, x, z_cap=None):
        """
        Upper bound on the Fenchel argmax when curvatures are capped

        The cap is the clamp level gamma2 - eps_margin, or z_cap when smaller.
        """
        g0, g1, g2 = self.coefficients(t, x)
        cap = g2 - self.eps_margin
        if z_cap is not None:
            cap = np.minimum(cap, z_cap)
        return g1 / (g2 - cap)

    # ------------------------------------------------------------------
    # checks
    # ------------------------------------------------------------------
    def check_bounds(self, ts, xs, a_values):
        """
        Numerical (H3) sandwich and benchmark-consistency report over a control grid

        Returns:
            Dict with the worst violations (0 means the property holds)
        """
        tt, xx, aa = np.meshgrid(np.atleast_1d(ts), np.atleast_1d(xs),
                                 np.atleast_1d(a_values), indexing='ij')
        G = self.running_cost_G(tt, xx, aa)
        lower = aa ** 2 / self.c_lower - self.c_lower
        upper = self.c_upper * (1 + aa ** 2)
        report = {
            'h3_lower_violation': float(np.max(np.maximum(lower - G, 0.0))),
            'h3_upper_violation': float(np.max(np.maximum(G - upper, 0.0))),
            'c_upper': self.c_upper,
            'c_lower': self.c_lower,
        }
        if self.is_benchmark:
            g0, g1, g2 = self.coefficients(tt, xx)
            quadratic = 0.5 * g2 * aa ** 2 - g1 * aa + g0
            scale = np.maximum(1.0, np.abs(G))
            report['benchmark_consistency'] = float(np.max(np.abs(quadratic - G) / scale))
        if report['h3_lower_violation'] > 0 or report['h3_upper_violation'] > 0:
            logger.warning("(H3) sandwich violated on the control grid: %s", report)
        return report
