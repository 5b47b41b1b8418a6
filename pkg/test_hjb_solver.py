"""
Tests for the explicit HJB scheme and its diagnostics
"""

import os
import shutil
import sys
import tempfile

import numpy as np

sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

from models.bachelier import bachelier_atm, bachelier_call
from models.errors import DomainError, NumericalHealthError, PreconditionError
from models.facelift import facelift
from models.hjb_solver import (SolverGrid, ValueSurface, check_cfl, comparison_bounds, diagnostics,
                               refinement_study, solve, stable_steps)
from models.impact_model import ImpactModel
from models.payoffs import call_payoff

BACHELIER_ATM = 0.0797885


def affine_surface(n_steps=1024):
    """v = 2x + 1 on an exactly representable grid (dx = 1/128)"""
    model = ImpactModel(0.2, 0.1)
    grid = SolverGrid.uniform(-1.0, 3.0, 513, 1.0, n_steps)
    return model, solve(model, 2 * grid.x_nodes + 1, grid)


def benchmark_call(n_x=241, x_min=-0.2, x_max=2.2):
    model = ImpactModel(0.2, 0.1, eps_margin=2.5)
    xs = np.linspace(x_min, x_max, n_x)
    _, phi_hat, _ = facelift(model, call_payoff(1.0), xs)
    grid = SolverGrid.uniform(x_min, x_max, n_x, 1.0, stable_steps(model, xs, 1.0, phi_hat))
    return model, phi_hat, grid


def test_grid_validation():
    try:
        SolverGrid(t_nodes=np.array([0.0, 0.1, 0.3]), x_nodes=np.linspace(0, 1, 5))
        assert False, "non-uniform time grid accepted"
    except DomainError:
        pass
    try:
        SolverGrid(t_nodes=np.array([0.1, 0.2]), x_nodes=np.linspace(0, 1, 5))
        assert False, "time grid not starting at 0 accepted"
    except DomainError:
        pass
    grid = SolverGrid.uniform(0.0, 2.0, 201, 1.0, 400)
    assert grid.n_steps == 400 and abs(grid.dx - 0.01) < 1e-15 and grid.domain == (0.0, 2.0)


def test_affine_terminal_is_stationary():
    model, vs = affine_surface()
    xs = vs.x_nodes
    assert np.max(np.abs(vs.v - (2 * xs + 1))) < 1e-12
    assert np.max(np.abs(vs.dv - 2.0)) < 1e-12
    assert np.allclose(vs.a_star, 0.2, rtol=0.0, atol=1e-15)
    report = diagnostics(vs, model)
    for key in ('monotonicity_violation', 'concavity_violation', 'parabolicity_violation'):
        assert report[key] <= 1e-12, key
    assert report['gamma_consistency'] <= 1e-12


def test_cfl_violation_rejected():
    model = ImpactModel(0.2, 0.1, eps_margin=2.5)
    xs = np.linspace(-0.2, 2.2, 241)
    _, phi_hat, _ = facelift(model, call_payoff(1.0), xs)
    grid = SolverGrid.uniform(-0.2, 2.2, 241, 1.0, 100)
    report = check_cfl(model, grid, phi_hat)
    assert not report['ok'] and report['ratio'] > 1
    assert abs(report['a_bound'] - 0.4) < 1e-6
    try:
        solve(model, phi_hat, grid)
        assert False, "unstable grid accepted"
    except PreconditionError:
        pass


def test_bachelier_limit():
    model = ImpactModel(0.2, 1e-6)
    xs = np.linspace(-0.5, 2.5, 401)
    _, phi_hat, _ = facelift(model, call_payoff(1.0), xs)
    n_steps = stable_steps(model, xs, 1.0, phi_hat)
    assert 700 <= n_steps <= 720
    vs = solve(model, phi_hat, SolverGrid.uniform(-0.5, 2.5, 401, 1.0, n_steps))
    assert abs(vs.value_at(1.0) - BACHELIER_ATM) <= 2e-3
    assert abs(bachelier_atm(0.2, 1.0) - BACHELIER_ATM) < 1e-7
    interior = (xs > 0.2) & (xs < 1.8)
    assert np.max(np.abs(vs.v[0][interior] - bachelier_call(xs[interior], 1.0, 0.2, 1.0))) < 2e-3


def test_benchmark_call_laws():
    model, phi_hat, grid = benchmark_call()
    vs = solve(model, phi_hat, grid)
    assert vs.value_at(1.0) >= BACHELIER_ATM - 2e-3
    report = diagnostics(vs, model)
    assert report['monotonicity_violation'] <= 1e-8
    assert report['concavity_violation'] == 0.0
    assert report['parabolicity_violation'] == 0.0
    assert report['max_d2v'] <= 10.0 - 2.5
    assert vs.clamp_stats['clamped_node_steps'] == 0
    assert vs.cfl_ratio <= 1.0 + 1e-9
    assert np.all(vs.a_star > 0)

    bounds = comparison_bounds(vs, model, phi_hat)
    assert bounds['idle_gap'] >= -1e-12
    assert bounds['zero_cost_gap'] >= -2e-3


def test_scheme_is_monotone_in_terminal_data():
    model, phi_hat, _ = benchmark_call(n_x=121)
    bumped = phi_hat.copy()
    bumped[60] += 1e-6
    xs = np.linspace(-0.2, 2.2, 121)
    n_steps = max(stable_steps(model, xs, 1.0, phi_hat), stable_steps(model, xs, 1.0, bumped))
    grid = SolverGrid.uniform(-0.2, 2.2, 121, 1.0, n_steps)
    base = solve(model, phi_hat, grid)
    up = solve(model, bumped, grid)
    assert np.all(up.v[0] >= base.v[0] - 1e-14)


def test_curvature_consistency_improves_under_refinement():
    model = ImpactModel(0.2, 0.1, eps_margin=2.5)

    def terminal(xs):
        return facelift(model, call_payoff(1.0), xs)[1]

    xs = np.linspace(-0.2, 2.2, 121)
    n_steps = stable_steps(model, xs, 1.0, terminal(xs))
    study = refinement_study(model, terminal, -0.2, 2.2, 121, n_steps, 1.0, levels=2)
    coarse, fine = study['levels']
    assert fine['gamma_consistency'] < coarse['gamma_consistency']
    assert len(study['differences']) == 1 and study['differences'][0] < 1e-2


def test_value_error_shrinks_fourfold_per_refinement():
    # cos(k x) has zero curvature at both edges, so the heat solution is exact there
    model = ImpactModel(0.2, 1e-6)
    k = 0.5 * np.pi

    def terminal(xs):
        return np.cos(k * xs)

    study = refinement_study(model, terminal, -1.0, 1.0, 21, 8, 0.0, levels=3)
    assert len(study['ratios']) == 1
    assert 3.0 <= study['ratios'][0] <= 5.0, study['ratios']
    exact = np.exp(-0.5 * 0.04 * k ** 2)
    assert abs(study['levels'][-1]['v0'] - exact) < 1e-4


def test_store_every_and_persistence():
    model, vs = affine_surface()
    try:
        solve(model, 2 * vs.x_nodes + 1, SolverGrid.uniform(-1.0, 3.0, 513, 1.0, 1024), store_every=3)
        assert False, "non-divisor stride accepted"
    except PreconditionError:
        pass
    thin = solve(model, 2 * vs.x_nodes + 1, SolverGrid.uniform(-1.0, 3.0, 513, 1.0, 1024), store_every=4)
    assert thin.n_steps == 256 and abs(thin.dt - 4.0 / 1024) < 1e-15

    tmp = tempfile.mkdtemp()
    try:
        path = os.path.join(tmp, 'cache', 'surface.joblib')
        vs.save(path)
        loaded = ValueSurface.load(path)
        assert np.array_equal(loaded.v, vs.v) and loaded.cfl_ratio == vs.cfl_ratio
        frame = vs.to_frame(every=256)
        assert list(frame.columns) == ['t', 'x', 'v', 'dv', 'd2v', 'a_star', 'gamma_hat']
        assert len(frame) == 5 * 513
    finally:
        shutil.rmtree(tmp)


def test_clamp_escalation_in_strict_mode():
    # unlifted digital data: the clamp binds at the jump
    model = ImpactModel(0.2, 0.1, eps_margin=2.5)
    xs = np.linspace(-1.0, 1.0, 101)
    terminal = np.where(xs >= 0, 1.0, 0.0)
    grid = SolverGrid.uniform(-1.0, 1.0, 101, 1.0, stable_steps(model, xs, 1.0, terminal))
    relaxed = solve(model, terminal, grid, clamp_fraction=0.0)
    assert relaxed.clamp_stats['clamped_node_steps'] > 0
    try:
        solve(model, terminal, grid, clamp_fraction=0.0, strict=True)
        assert False, "clamp activation not escalated"
    except NumericalHealthError:
        pass


if __name__ == '__main__':
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith('test_') and callable(fn):
            try:
                fn()
                print(f"✅ {name}")
            except AssertionError as e:
                failed += 1
                print(f"❌ {name}: {e}")
    sys.exit(1 if failed else 0)
