"""
Tests for the impact model: closed forms, Fenchel transform and cost bounds
"""

import os
import sys

import numpy as np

sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

from models.coefficients import AffineCoefficient, CevClampedCoefficient, ConstantCoefficient
from models.errors import DegenerateParabolicityError, DomainError
from models.impact_model import ImpactModel

A_GRID = np.logspace(-3, 2, 200)


def benchmark():
    return ImpactModel(0.2, 0.1)


def test_sigma_impacted_examples():
    model = benchmark()
    assert abs(model.sigma_impacted(0.0, 1.0, 2.0) - 0.25) < 1e-15
    assert abs(model.sigma_impacted(0.0, 1.0, 0.0) - 0.2) < 1e-15
    assert np.isinf(model.sigma_impacted(0.0, 1.0, 10.0))
    assert np.isinf(model.sigma_impacted(0.0, 1.0, 25.0))


def test_sigma_inverse_examples():
    model = benchmark()
    assert abs(model.sigma_inverse(0.0, 1.0, 0.25) - 2.0) < 1e-12
    assert abs(model.sigma_inverse(0.0, 1.0, 0.2)) < 1e-15
    assert model.sigma_inverse(0.0, 1.0, 0.0) == -np.inf
    try:
        model.sigma_inverse(0.0, 1.0, -0.1)
        assert False, "negative volatility accepted"
    except DomainError:
        pass


def test_running_cost_examples():
    model = benchmark()
    assert abs(model.running_cost_G(0.0, 1.0, 0.25) - 0.0125) < 1e-15
    assert model.running_cost_G(0.0, 1.0, 0.2) == 0.0
    assert abs(model.running_cost_G(0.0, 1.0, 0.0) - 0.2) < 1e-15


def test_marginal_cost_examples():
    model = benchmark()
    assert abs(model.dG_da(0.0, 1.0, 0.25) - 0.5) < 1e-12
    assert model.dG_da(0.0, 1.0, 0.2) == 0.0
    try:
        model.dG_da(0.0, 1.0, 0.0)
        assert False, "a = 0 accepted"
    except DomainError:
        pass


def test_fenchel_examples():
    model = benchmark()
    value, argmax = model.fenchel(0.0, 1.0, 5.0)
    assert abs(value - 0.2) < 1e-12 and abs(argmax - 0.4) < 1e-12
    value, argmax = model.fenchel(0.0, 1.0, 0.0)
    assert value == 0.0 and abs(argmax - 0.2) < 1e-15
    value, argmax = model.fenchel(0.0, 1.0, -10.0)
    assert abs(value + 0.1) < 1e-12 and abs(argmax - 0.1) < 1e-12
    try:
        model.fenchel(0.0, 1.0, 10.0)
        assert False, "z = 1/f accepted"
    except DegenerateParabolicityError:
        pass


def test_round_trip_and_structure_identity():
    model = benchmark()
    gamma = model.sigma_inverse(0.0, 1.0, A_GRID)
    back = model.sigma_impacted(0.0, 1.0, gamma)
    assert np.allclose(back, A_GRID, rtol=1e-12, atol=0.0)
    identity = model.dG_da(0.0, 1.0, A_GRID) - A_GRID * gamma
    assert np.allclose(identity, 0.0, atol=1e-12 * np.max(np.abs(A_GRID * gamma)))


def test_marginal_cost_matches_central_difference():
    model = benchmark()
    a = np.linspace(0.05, 3.0, 50)
    for h in (1e-4, 5e-5):
        fd = (model.running_cost_G(0.0, 1.0, a + h) - model.running_cost_G(0.0, 1.0, a - h)) / (2 * h)
        assert np.max(np.abs(fd - model.dG_da(0.0, 1.0, a))) < 1e-8


def test_fenchel_first_order_condition_and_monotonicity():
    model = benchmark()
    z = np.linspace(-20.0, 9.9, 300)
    value, argmax = model.fenchel(0.0, 1.0, z)
    assert np.all(argmax > 0)
    assert np.max(np.abs(argmax * z - model.dG_da(0.0, 1.0, argmax))) < 1e-10
    assert np.all(np.diff(value) >= -1e-15)
    # brute-force sup over a fine control grid never beats the closed form
    a = np.linspace(0.0, 5.0, 20001)
    for zi, vi in zip(z[::30], value[::30]):
        brute = np.max(0.5 * a ** 2 * zi - model.running_cost_G(0.0, 1.0, a))
        assert brute <= vi + 1e-12


def test_general_quadratic_cost_matches_benchmark():
    general = ImpactModel(0.2, 0.1, gamma_coeffs=(0.2, 2.0, 10.0))
    model = benchmark()
    z = np.linspace(-5.0, 9.0, 50)
    v1, a1 = general.fenchel(0.0, 1.0, z)
    v2, a2 = model.fenchel(0.0, 1.0, z)
    assert np.allclose(v1, v2, rtol=1e-12, atol=1e-14)
    assert np.allclose(a1, a2, rtol=1e-12)
    assert np.allclose(general.running_cost_G(0.0, 1.0, A_GRID), model.running_cost_G(0.0, 1.0, A_GRID),
                       rtol=1e-10, atol=1e-12)


def test_bounds_sandwich_and_benchmark_consistency():
    model = benchmark()
    report = model.check_bounds(np.linspace(0, 1, 3), np.linspace(0, 2, 11), np.linspace(0, 10, 101))
    assert report['h3_lower_violation'] == 0.0
    assert report['h3_upper_violation'] == 0.0
    assert report['benchmark_consistency'] < 1e-12


def test_primal_cost_inverts_through_sigma():
    model = benchmark()
    gamma = model.sigma_inverse(0.0, 1.0, A_GRID)
    assert np.allclose(model.primal_cost_F(0.0, 1.0, gamma), model.running_cost_G(0.0, 1.0, A_GRID),
                       rtol=1e-9, atol=1e-12)
    assert np.isinf(model.primal_cost_F(0.0, 1.0, 10.0))


def test_state_gradient_matches_finite_difference():
    model = ImpactModel(CevClampedCoefficient(0.2, 0.5, 0.05, 0.4),
                        AffineCoefficient(0.08, 0.02, 0.05, 0.2), domain=(0.0, 2.0))
    assert model.state_dependent
    a = np.array([0.1, 0.3, 0.7])
    h = 1e-6
    fd = (model.running_cost_G(0.0, 1.3 + h, a) - model.running_cost_G(0.0, 1.3 - h, a)) / (2 * h)
    assert np.allclose(model.dG_dx(0.0, 1.3, a), fd, rtol=1e-6, atol=1e-9)


def test_constant_model_has_no_state_gradient():
    model = ImpactModel(ConstantCoefficient(0.2), ConstantCoefficient(0.1))
    assert not model.state_dependent
    assert np.all(model.dG_dx(0.0, np.linspace(0, 2, 5), 0.3) == 0.0)


def test_invalid_coefficients_rejected():
    for args in ((0.0, 0.1), (0.2, 0.0)):
        try:
            ImpactModel(*args)
            assert False, f"model {args} accepted"
        except DomainError:
            pass
    try:
        ImpactModel(0.2, 0.1, eps_margin=-1.0)
        assert False, "negative margin accepted"
    except DomainError:
        pass


def test_margin_must_keep_facelift_gamma_convex():
    # inf gamma2 = 1/f, so the margin must stay below 1 / (2 f)
    assert ImpactModel(0.2, 0.1, eps_margin=4.99).eps_margin == 4.99
    for f, eps in ((0.3, 2.5), (0.1, 5.0), (0.1, 7.5)):
        try:
            ImpactModel(0.2, f, eps_margin=eps)
            assert False, f"margin {eps} accepted with f={f}"
        except DomainError as e:
            assert 'eps_margin' in str(e)


def test_argmax_bound_respects_cap():
    model = ImpactModel(0.2, 0.1, eps_margin=2.5)
    assert abs(model.argmax_bound(0.0, 1.0, 5.0) - 0.4) < 1e-12
    # without a cap the clamp level 1/f - eps governs
    assert abs(model.argmax_bound(0.0, 1.0) - 0.8) < 1e-12


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
