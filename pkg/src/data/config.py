"""
Experiment configuration
Flat `key = value` files with dotted section prefixes, parsed into frozen dataclasses
"""

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from models.coefficients import COEFFICIENT_FAMILIES, make_coefficient
from models.errors import ConfigError, DomainError, PreconditionError
from models.facelift import facelift
from models.hedge_engine import SimConfig
from models.hjb_solver import CFL_TOLERANCE, SolverGrid, check_cfl, stable_steps
from models.impact_model import ImpactModel
from models.payoffs import PAYOFF_FAMILIES, make_payoff

COEFFICIENT_BLOCKS = ('model.sigma0', 'model.f', 'model.gamma.0', 'model.gamma.1', 'model.gamma.2')
COEFFICIENT_KEYS = {'family', 'value', 'intercept', 'slope', 'lower', 'upper', 'scale', 'beta', 'path'}

# key -> (type, default); a default of None means "derived" unless listed in REQUIRED
SCALAR_KEYS = {
    'model.c_upper': (float, None),
    'model.c_lower': (float, None),
    'model.eps_margin': (float, None),
    'model.eps_sign': (float, -1.0),
    'model.maturity': (float, 1.0),
    'payoff.family': (str, None),
    'payoff.strike': (str, None),
    'payoff.strike_low': (str, None),
    'payoff.strike_high': (str, None),
    'payoff.path': (str, None),
    'payoff.weight': (str, None),
    'payoff.slope': (str, None),
    'payoff.intercept': (str, None),
    'grid.x0': (float, 1.0),
    'grid.x_min': (float, None),
    'grid.x_max': (float, None),
    'grid.n_x': (int, 401),
    'grid.n_t': (int, None),
    'grid.gamma_kind': (str, 'constraint'),
    'grid.clamp_fraction': (float, 0.05),
    'dp.n_x': (int, None),
    'dp.n_t': (int, 100),
    'dp.n_controls': (int, 161),
    'dp.a_max': (float, None),
    'dp.n_m': (int, None),
    'dp.t_split': (float, None),
    'dp.max_extrapolation': (float, 0.2),
    'dp.tolerance': (float, 1e-2),
    'dp.regrid': (bool, True),
    'sim.n_paths': (int, 20000),
    'sim.n_steps': (int, 256),
    'sim.seed': (int, None),
    'sim.antithetic': (bool, True),
    'sim.n_jobs': (int, 1),
    'sim.block_size': (int, 1024),
    'sim.record_paths': (int, 16),
    'functional.n_paths': (int, 2000),
    'functional.n_steps': (int, 256),
    'functional.tolerance': (float, 1e-10),
    'functional.curvature': (float, 0.1),
    'functional.family': (str, 'quadratic'),
    'outputs.directory': (str, 'results'),
    'outputs.surface_every': (int, 1),
    'outputs.path_every': (int, 1),
}
REQUIRED = ('payoff.family', 'sim.seed')


@dataclass(frozen=True)
class CoefficientConfig:
    family: str
    params: dict

    def build(self, key):
        return make_coefficient(self.family, self.params, key=key)


@dataclass(frozen=True)
class ModelConfig:
    sigma0: CoefficientConfig
    f: CoefficientConfig
    gamma: Optional[tuple] = None
    c_upper: Optional[float] = None
    c_lower: Optional[float] = None
    eps_margin: Optional[float] = None
    eps_sign: float = -1.0
    maturity: float = 1.0

    def build(self, domain=(-10.0, 10.0)):
        gamma = None
        if self.gamma is not None:
            gamma = tuple(c.build(f'model.gamma.{i}') for i, c in enumerate(self.gamma))
        try:
            return ImpactModel(self.sigma0.build('model.sigma0'), self.f.build('model.f'),
                               gamma_coeffs=gamma, c_upper=self.c_upper, c_lower=self.c_lower,
                               eps_margin=self.eps_margin, maturity=self.maturity, domain=domain)
        except DomainError as e:
            raise ConfigError(f"model: {e}") from e


@dataclass(frozen=True)
class PayoffConfig:
    family: str
    params: dict

    def build(self, maturity):
        try:
            return make_payoff(self.family, self.params, maturity=maturity)
        except DomainError as e:
            raise ConfigError(f"payoff: {e}") from e


@dataclass(frozen=True)
class GridConfig:
    x0: float
    x_min: float
    x_max: float
    n_x: int
    n_t: int
    gamma_kind: str = 'constraint'
    clamp_fraction: float = 0.05


@dataclass(frozen=True)
class DPConfig:
    n_x: int
    n_t: int
    n_controls: int
    a_max: float
    n_m: int
    t_split: float
    max_extrapolation: float = 0.2
    tolerance: float = 1e-2
    regrid: bool = True


@dataclass(frozen=True)
class SimSettings:
    n_paths: int
    n_steps: int
    seed: int
    antithetic: bool = True
    n_jobs: int = 1
    block_size: int = 1024
    record_paths: int = 16

    def build(self, **overrides):
        values = dict(n_paths=self.n_paths, n_steps=self.n_steps, seed=self.seed,
                      antithetic=self.antithetic, n_jobs=self.n_jobs, block_size=self.block_size,
                      record_paths=self.record_paths)
        values.update(overrides)
        try:
            return SimConfig(**values)
        except DomainError as e:
            raise ConfigError(f"sim: {e}") from e


@dataclass(frozen=True)
class FunctionalConfig:
    n_paths: int = 2000
    n_steps: int = 256
    tolerance: float = 1e-10
    curvature: float = 0.1
    family: str = 'quadratic'


@dataclass(frozen=True)
class OutputConfig:
    directory: str = 'results'
    surface_every: int = 1
    path_every: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment: every derived default filled in"""

    model: ModelConfig
    payoff: PayoffConfig
    grid: GridConfig
    dp: DPConfig
    sim: SimSettings
    functional: FunctionalConfig
    outputs: OutputConfig
    config_hash: str = ''
    raw: dict = field(default_factory=dict)

    def build_model(self):
        return self.model.build(domain=(self.grid.x_min, self.grid.x_max))

    def build_payoff(self):
        return self.payoff.build(self.model.maturity)

    def x_nodes(self):
        return np.linspace(self.grid.x_min, self.grid.x_max, self.grid.n_x)

    def solver_grid(self):
        return SolverGrid.uniform(self.grid.x_min, self.grid.x_max, self.grid.n_x,
                                  self.model.maturity, self.grid.n_t)

    def validate(self):
        """
        Parse-time precondition checks: families build, the payoff grid is sane
        and the explicit scheme is monotone on the configured grid

        Returns:
            CFL report dict
        """
        model = self.build_model()
        payoff = self.build_payoff()
        if self.grid.n_x < 3:
            raise ConfigError("grid.n_x: need at least 3 price nodes")
        if not self.grid.x_min < self.grid.x0 < self.grid.x_max:
            raise ConfigError(f"grid.x0: {self.grid.x0} outside [{self.grid.x_min}, {self.grid.x_max}]")
        if self.grid.gamma_kind not in ('constraint', 'dupire'):
            raise ConfigError(f"grid.gamma_kind: unknown kind '{self.grid.gamma_kind}'")
        if not 0 < self.dp.t_split <= self.model.maturity:
            raise ConfigError(f"dp.t_split: {self.dp.t_split} outside (0, T]")
        if self.grid.n_t % self.sim.n_steps:
            raise PreconditionError(f"grid.n_t={self.grid.n_t} is not a multiple of sim.n_steps={self.sim.n_steps}")
        if not payoff.is_markovian:
            return {'ok': True, 'ratio': 0.0, 'a_bound': float('nan'), 'terminal_curvature': float('nan')}
        _, phi_hat, _ = facelift(model, payoff, self.x_nodes(), kind=self.grid.gamma_kind,
                                 eps_sign=self.model.eps_sign)
        # the ratio scales as 1 / n_t, so a one-step grid is enough to evaluate it
        unit = check_cfl(model, SolverGrid.uniform(self.grid.x_min, self.grid.x_max, self.grid.n_x,
                                                   self.model.maturity, 1), phi_hat)
        ratio = unit['ratio'] / self.grid.n_t
        report = {**unit, 'ratio': ratio, 'ok': bool(ratio <= 1.0 + CFL_TOLERANCE)}
        if not report['ok']:
            raise PreconditionError(
                f"grid.n_t: CFL violated (ratio {report['ratio']:.4f}); need at least "
                f"{stable_steps(model, self.x_nodes(), self.model.maturity, phi_hat)} steps")
        return report


def _parse_value(key, text, kind):
    try:
        if kind is bool:
            lowered = text.strip().lower()
            if lowered in ('true', 'yes', 'on', '1'):
                return True
            if lowered in ('false', 'no', 'off', '0'):
                return False
            raise ValueError(text)
        if kind is int:
            number = float(text)
            if number != int(number):
                raise ValueError(text)
            return int(number)
        if kind is float:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(text)
            return value
        return text.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse '{text}' as {kind.__name__}") from None


def read_pairs(text, source='<string>'):
    """Raw key -> value strings; `#` starts a comment"""
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got '{line}'")
        key, value = (part.strip() for part in line.split('=', 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in pairs:
            raise ConfigError(f"{key}: duplicate key at {source}:{lineno}")
        pairs[key] = value
    return pairs


def _coefficient_block(pairs, prefix, default=None):
    params = {key[len(prefix) + 1:]: value for key, value in pairs.items() if key.startswith(prefix + '.')}
    if not params:
        return default
    family = params.pop('family', None)
    if family is None:
        raise ConfigError(f"{prefix}.family: missing coefficient family")
    if family not in COEFFICIENT_FAMILIES:
        raise ConfigError(f"{prefix}.family: unknown coefficient family '{family}' "
                          f"(expected one of {sorted(COEFFICIENT_FAMILIES)})")
    return CoefficientConfig(family=family, params=params)


def parse_config(text, source='<string>', overrides=None):
    """
    Parse and resolve a config

    Args:
        text: config file contents
        source: name used in error messages
        overrides: optional dict of key -> value strings applied after the file

    Returns:
        ExperimentConfig with derived defaults resolved
    """
    pairs = read_pairs(text, source)
    pairs.update(overrides or {})

    for key in pairs:
        block = next((b for b in COEFFICIENT_BLOCKS if key.startswith(b + '.')), None)
        if block is not None:
            if key[len(block) + 1:] not in COEFFICIENT_KEYS:
                raise ConfigError(f"{key}: unknown coefficient parameter")
            continue
        if key not in SCALAR_KEYS:
            raise ConfigError(f"{key}: unknown config key")
    for key in REQUIRED:
        if key not in pairs:
            raise ConfigError(f"{key}: mandatory key missing")

    values = {key: (_parse_value(key, pairs[key], kind) if key in pairs else default)
              for key, (kind, default) in SCALAR_KEYS.items()}

    family = values['payoff.family'].split('(', 1)[0].strip()
    if family not in PAYOFF_FAMILIES:
        raise ConfigError(f"payoff.family: unknown payoff family '{family}' "
                          f"(expected one of {sorted(PAYOFF_FAMILIES)})")

    sigma0 = _coefficient_block(pairs, 'model.sigma0', CoefficientConfig('constant', {'value': '0.2'}))
    f = _coefficient_block(pairs, 'model.f', CoefficientConfig('constant', {'value': '0.1'}))
    gamma_blocks = [_coefficient_block(pairs, f'model.gamma.{i}') for i in range(3)]
    if any(b is not None for b in gamma_blocks) and not all(b is not None for b in gamma_blocks):
        raise ConfigError("model.gamma: all of model.gamma.0, .1 and .2 must be given together")
    gamma = tuple(gamma_blocks) if gamma_blocks[0] is not None else None

    model_cfg = ModelConfig(sigma0=sigma0, f=f, gamma=gamma, c_upper=values['model.c_upper'],
                            c_lower=values['model.c_lower'], eps_margin=values['model.eps_margin'],
                            eps_sign=values['model.eps_sign'], maturity=values['model.maturity'])
    if model_cfg.maturity <= 0:
        raise ConfigError("model.maturity: must be positive")
    if model_cfg.eps_sign not in (-1.0, 1.0):
        raise ConfigError("model.eps_sign: must be -1 or 1")

    payoff_params = {name.split('.', 1)[1]: values[name] for name in SCALAR_KEYS
                     if name.startswith('payoff.') and name != 'payoff.family' and values[name] is not None}
    payoff_cfg = PayoffConfig(family=values['payoff.family'], params=payoff_params)

    # the model bounds over a generous window give sigma0 for the default domain width
    limits = model_cfg.build(domain=(values['grid.x0'] - 10.0, values['grid.x0'] + 10.0)).bounds()
    width = 4.0 * limits['sigma0_sup'] * math.sqrt(model_cfg.maturity)
    x_min = values['grid.x_min'] if values['grid.x_min'] is not None else values['grid.x0'] - width
    x_max = values['grid.x_max'] if values['grid.x_max'] is not None else values['grid.x0'] + width
    if not x_min < x_max:
        raise ConfigError(f"grid.x_min: {x_min} must be below grid.x_max {x_max}")

    sim = SimSettings(n_paths=values['sim.n_paths'], n_steps=values['sim.n_steps'], seed=values['sim.seed'],
                      antithetic=values['sim.antithetic'], n_jobs=values['sim.n_jobs'],
                      block_size=values['sim.block_size'], record_paths=values['sim.record_paths'])
    if sim.n_steps < 1:
        raise ConfigError("sim.n_steps: must be positive")

    model = model_cfg.build(domain=(x_min, x_max))
    payoff = payoff_cfg.build(model_cfg.maturity)
    xs = np.linspace(x_min, x_max, values['grid.n_x'])
    a_bound = None
    n_t = values['grid.n_t']
    if payoff.is_markovian:
        _, phi_hat, _ = facelift(model, payoff, xs, kind=values['grid.gamma_kind'], eps_sign=model_cfg.eps_sign)
        if n_t is None:
            n_t = stable_steps(model, xs, model_cfg.maturity, phi_hat)
            n_t = int(math.ceil(n_t / sim.n_steps) * sim.n_steps)
        a_bound = check_cfl(model, SolverGrid.uniform(x_min, x_max, len(xs), model_cfg.maturity, 1),
                            phi_hat)['a_bound']
    elif n_t is None:
        n_t = sim.n_steps

    grid = GridConfig(x0=values['grid.x0'], x_min=x_min, x_max=x_max, n_x=values['grid.n_x'], n_t=n_t,
                      gamma_kind=values['grid.gamma_kind'], clamp_fraction=values['grid.clamp_fraction'])

    a_max = values['dp.a_max']
    if a_max is None:
        cap = 5.0 * limits['sigma0_sup'] / (limits['f_inf'] * model.eps_margin)
        a_max = min(cap, 2.0 * a_bound) if a_bound is not None else cap
    dp = DPConfig(n_x=values['dp.n_x'] or grid.n_x, n_t=values['dp.n_t'], n_controls=values['dp.n_controls'],
                  a_max=a_max, n_m=values['dp.n_m'] or values['dp.n_x'] or grid.n_x,
                  t_split=values['dp.t_split'] if values['dp.t_split'] is not None else 0.5 * model_cfg.maturity,
                  max_extrapolation=values['dp.max_extrapolation'], tolerance=values['dp.tolerance'],
                  regrid=values['dp.regrid'])

    functional = FunctionalConfig(n_paths=values['functional.n_paths'], n_steps=values['functional.n_steps'],
                                  tolerance=values['functional.tolerance'],
                                  curvature=values['functional.curvature'], family=values['functional.family'])
    outputs = OutputConfig(directory=values['outputs.directory'], surface_every=values['outputs.surface_every'],
                           path_every=values['outputs.path_every'])

    canonical = '\n'.join(f'{key} = {pairs[key]}' for key in sorted(pairs))
    return ExperimentConfig(model=model_cfg, payoff=payoff_cfg, grid=grid, dp=dp, sim=sim,
                            functional=functional, outputs=outputs,
                            config_hash=hashlib.sha256(canonical.encode('utf-8')).hexdigest(),
                            raw=dict(pairs))


def load_config(path, overrides=None):
    """Read, parse and validate a config file"""
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e}") from e
    config = parse_config(text, source=str(path), overrides=overrides)
    config.validate()
    return config
