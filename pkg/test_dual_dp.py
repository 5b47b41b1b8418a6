"""
Tests for the Markov-chain dynamic programme and the DPP residual
"""

import itertools
import os
import sys

import numpy as np

sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

from models.dual_dp import (ControlGrid, DPGrids, check_dpp, forward_budget, solve_dp)
from models.errors import DomainError, PreconditionError
from models.impact_model import ImpactModel
from models.payoffs import affine_payoff, asian_call_payoff, asian_linear_payoff, call_payoff


def test_control_grid_always_holds_zero():
    controls = ControlGrid(np.array([0.4, 0.2, 0.2]))
    assert np.array_equal(controls.a_values, [0.0, 0.2, 0.4])
    assert controls.a_max == 0.4 and abs(controls.spacing - 0.2) < 1e-15
    for args in ((0.0, 5), (1.0, 1)):
        try:
            ControlGrid.linspace(*args)
            assert False, f"control grid {args} accepted"
        except DomainError:
            pass


def test_affine_payoff_value_and_policy():
    model = ImpactModel(0.2, 0.1)
    grids = DPGrids.uniform(-1.0, 3.0, 81, 1.0, 10, 0.8, 5)
    solution = solve_dp(model, affine_payoff(2.0, 1.0), grids, terminal=2 * grids.x_nodes + 1,
                        max_extrapolation=1.0)
    assert solution.markovian
    assert np.max(np.abs(solution.value[0][:, 0] - (2 * grids.x_nodes + 1))) < 1e-12
    assert np.allclose(solution.policy[0], 0.2, rtol=0.0, atol=1e-15)
    frame = solution.to_frame(every=5)
    assert list(frame.columns) == ['t', 'x', 'v', 'a_star']
    assert frame['a_star'].isna().sum() == 81


def test_two_step_toy_matches_enumeration():
    model = ImpactModel(0.2, 0.1)
    controls = (0.0, 0.2, 0.4)
    x0, dt = 1.0, 0.5
    sq = np.sqrt(dt)
    xs = x0 + 0.2 * sq * np.arange(-8, 9)
    grids = DPGrids(t_nodes=np.array([0.0, 0.5, 1.0]), x_nodes=xs, controls=ControlGrid(np.array(controls)))
    solution = solve_dp(model, call_payoff(1.0), grids, terminal=np.maximum(xs - 1.0, 0.0),
                        max_extrapolation=1.0)

    def G(a):
        return float(model.running_cost_G(0.0, x0, a))

    best = -np.inf
    for a0, a_up, a_down in itertools.product(controls, repeat=3):
        value = -G(a0) * dt
        for sign, a1 in ((1.0, a_up), (-1.0, a_down)):
            x1 = x0 + sign * a0 * sq
            payoff = 0.5 * (max(x1 + a1 * sq - 1.0, 0.0) + max(x1 - a1 * sq - 1.0, 0.0))
            value += 0.5 * (payoff - G(a1) * dt)
        best = max(best, value)
    assert abs(solution.value_at(x0) - best) < 1e-12


def test_dpp_residual_affine_and_degenerate_split():
    model = ImpactModel(0.2, 0.1)
    grids = DPGrids.uniform(-1.0, 3.0, 81, 1.0, 10, 0.8, 5)
    payoff = affine_payoff(2.0, 1.0)
    for t_split in (0.3, 0.5, 0.9):
        report = check_dpp(model, payoff, grids, t_split, max_extrapolation=1.0)
        assert report['residual'] <= 1e-12, t_split
    assert check_dpp(model, payoff, grids, 1.0)['residual'] == 0.0
    try:
        check_dpp(model, payoff, grids, 0.55)
        assert False, "off-grid split accepted"
    except PreconditionError:
        pass


def test_dpp_residual_benchmark_call():
    model = ImpactModel(0.2, 0.1, eps_margin=2.5)
    grids = DPGrids.uniform(-0.2, 2.2, 121, 1.0, 20, 0.8, 41)
    report = check_dpp(model, call_payoff(1.0), grids, 0.5)
    assert 0.0 < report['residual'] <= 1e-2
    assert report['split_index'] == 10 and report['regrid']
    unshifted = check_dpp(model, call_payoff(1.0), grids, 0.5, regrid=False)
    assert unshifted['residual'] <= 1e-12


def test_asian_linear_value_is_initial_price():
    model = ImpactModel(0.2, 0.1)
    grids = DPGrids.uniform(0.0, 2.0, 41, 1.0, 10, 0.4, 9, n_m=21)
    payoff = asian_linear_payoff('uniform')
    solution = solve_dp(model, payoff, grids, max_extrapolation=1.0)
    assert not solution.markovian
    assert len(solution.m_nodes[0]) == 1 and len(solution.m_nodes[5]) == 21
    assert abs(solution.value_at(1.0) - 1.0) < 1e-10
    assert solution.extrapolation['clipped_average'] == 0
    frame = solution.to_frame()
    assert 'm' in frame.columns


def test_terminal_weight_asian_matches_markovian_call():
    model = ImpactModel(0.2, 0.1, eps_margin=2.5)
    grids = DPGrids.uniform(-0.2, 2.2, 121, 1.0, 20, 0.8, 41)
    markovian = solve_dp(model, call_payoff(1.0), grids)
    asian = solve_dp(model, asian_call_payoff(1.0, weight='terminal'), grids)
    # the raw payoff sits below the lifted one near the strike
    assert np.max(asian.value[-1][:, 0] - np.maximum(grids.x_nodes - 1.0, 0.0)) > 1e-3
    for k in range(len(grids.t_nodes)):
        assert asian.value[k].shape == markovian.value[k].shape
        assert np.max(np.abs(asian.value[k] - markovian.value[k])) < 1e-10, k
    assert abs(asian.value_at(1.0) - markovian.value_at(1.0)) < 1e-10


def test_forward_budget_under_zero_cost_policy():
    model = ImpactModel(0.2, 0.1)
    grids = DPGrids.uniform(-1.0, 3.0, 81, 1.0, 10, 0.8, 5)
    solution = solve_dp(model, affine_payoff(2.0, 1.0), grids, max_extrapolation=1.0)
    budget = forward_budget(solution, model, n_paths=500, seed=3, x0=1.0)
    assert abs(budget['mean'] - 0.04) < 1e-12
    assert budget['standard_error'] < 1e-12
    assert budget['exit_share'] == 0.0


def test_forward_budget_is_keyed_by_seed():
    model = ImpactModel(0.2, 0.1, eps_margin=2.5)
    grids = DPGrids.uniform(-0.2, 2.2, 121, 1.0, 20, 0.8, 41)
    solution = solve_dp(model, call_payoff(1.0), grids)
    first = forward_budget(solution, model, n_paths=2000, seed=7, x0=1.0)
    again = forward_budget(solution, model, n_paths=2000, seed=7, x0=1.0)
    other = forward_budget(solution, model, n_paths=2000, seed=8, x0=1.0)
    assert first == again
    assert first['mean'] != other['mean']
    assert first['standard_error'] > 0.0
    # sigma0^2 T when idle, (a_max)^2 T at most
    assert 0.0 < first['mean'] <= 0.64 + 1e-12


def test_value_grows_under_nested_control_refinement():
    model = ImpactModel(0.2, 0.1, eps_margin=2.5)
    values = []
    for n_controls in (5, 9, 17):
        grids = DPGrids.uniform(-2.0, 4.0, 121, 1.0, 20, 0.8, n_controls)
        solution = solve_dp(model, call_payoff(1.0), grids, max_extrapolation=1.0)
        window = np.abs(grids.x_nodes - 1.0) <= 0.5
        values.append(solution.value[0][window, 0])
    for coarse, fine in zip(values[:-1], values[1:]):
        assert np.all(fine >= coarse - 1e-12)


def test_extrapolation_threshold():
    model = ImpactModel(0.2, 0.1, eps_margin=2.5)
    grids = DPGrids.uniform(0.8, 1.2, 9, 1.0, 4, 0.8, 5)
    try:
        solve_dp(model, call_payoff(1.0), grids, max_extrapolation=0.0)
        assert False, "grid exits tolerated"
    except PreconditionError:
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
