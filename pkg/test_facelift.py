"""
Tests for the concave envelope and the payoff face-lift
"""

import os
import sys

import numpy as np

sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

from models.errors import DomainError
from models.facelift import (TerminalGrid, boundary_contact, build_gamma, chord_envelope,
                             concave_envelope, facelift, facelift_payoff)
from models.impact_model import ImpactModel
from models.payoffs import affine_payoff, call_payoff, digital_payoff, table_payoff


def test_envelope_small_examples():
    xs = np.array([-1.0, 0.0, 1.0])
    assert np.array_equal(concave_envelope(xs, -np.abs(xs)), -np.abs(xs))
    assert np.array_equal(concave_envelope(xs, np.abs(xs)), np.ones(3))
    xs = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    step = np.where(xs >= 0, 1.0, 0.0)
    assert np.allclose(concave_envelope(xs, step), [0.0, 0.5, 1.0, 1.0, 1.0], atol=1e-15)


def test_envelope_rejects_bad_grids():
    for xs, values in ((np.array([0.0]), np.array([1.0])),
                       (np.array([0.0, 0.0]), np.array([1.0, 2.0])),
                       (np.array([0.0, 1.0]), np.array([1.0, np.nan])),
                       (np.array([0.0, 1.0, 2.0]), np.array([1.0, 2.0]))):
        try:
            concave_envelope(xs, values)
            assert False, f"grid {xs} accepted"
        except DomainError:
            pass


def test_envelope_matches_chord_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n = int(rng.integers(2, 26))
        xs = np.sort(rng.choice(np.linspace(-3.0, 3.0, 601), size=n, replace=False))
        values = rng.normal(size=n)
        assert np.allclose(concave_envelope(xs, values), chord_envelope(xs, values), rtol=0.0, atol=1e-12)


def test_envelope_majorant_idempotent_and_minimal():
    rng = np.random.default_rng(7)
    xs = np.linspace(-1.0, 1.0, 41)
    values = np.sin(4 * xs) + 0.3 * rng.normal(size=xs.size)
    env = concave_envelope(xs, values)
    assert np.all(env >= values)
    assert np.allclose(concave_envelope(xs, env), env, rtol=0.0, atol=1e-14)
    assert np.all(np.diff(env, 2) <= 1e-12)

    # lowering any interior node breaks either the majorant or concavity
    delta = 1e-6
    for j in range(1, len(xs) - 1):
        lowered = env.copy()
        lowered[j] -= delta
        below = lowered[j] < values[j]
        convex_kink = np.diff(lowered, 2)[j - 1] > 1e-9
        assert below or convex_kink, f"node {j} could be lowered"


def test_affine_payoff_unchanged():
    model = ImpactModel(0.2, 0.1)
    xs = np.linspace(-1.0, 3.0, 201)
    _, phi_hat, report = facelift(model, affine_payoff(2.0, 1.0), xs)
    assert np.allclose(phi_hat, 2 * xs + 1, rtol=0.0, atol=1e-9)
    assert report['lifted_nodes'] == 0


def test_call_facelift_respects_curvature_constraint():
    model = ImpactModel(0.2, 0.1, c_upper=5.0)
    xs = np.linspace(0.0, 2.0, 401)
    tg, phi_hat, report = facelift(model, call_payoff(1.0), xs, kind='dupire')
    assert np.all(phi_hat >= tg.phi)
    dx = xs[1] - xs[0]
    assert np.max(np.diff(phi_hat, 2) / dx ** 2) <= 10.0 + 1e-6
    assert report['lifted_nodes'] > 0
    assert report['max_lift'] > 0
    assert not report['boundary_contact']['left'] and not report['boundary_contact']['right']


def test_call_facelift_matches_chord_oracle_on_coarse_grid():
    model = ImpactModel(0.2, 0.1, c_upper=5.0)
    xs = np.linspace(0.0, 2.0, 41)
    tg, phi_hat, _ = facelift(model, call_payoff(1.0), xs, kind='dupire')
    oracle = chord_envelope(xs, tg.phi - tg.gamma_fn) + tg.gamma_fn
    assert np.allclose(phi_hat, oracle, rtol=0.0, atol=1e-12)


def test_facelift_is_idempotent():
    model = ImpactModel(0.2, 0.1, c_upper=5.0)
    xs = np.linspace(-1.0, 1.0, 201)
    tg, phi_hat, _ = facelift(model, digital_payoff(0.0), xs, kind='dupire')
    again = facelift_payoff(TerminalGrid(xs=xs, phi=phi_hat, gamma_fn=tg.gamma_fn))
    assert np.allclose(again, phi_hat, rtol=0.0, atol=1e-12)


def test_digital_facelift_profile():
    # against 5 x^2 the lifted digital is (1 + sqrt(5) x)^2 on [-1/sqrt(5), 0]
    model = ImpactModel(0.2, 0.1, c_upper=5.0)
    xs = np.linspace(-1.0, 1.0, 201)
    _, phi_hat, _ = facelift(model, digital_payoff(0.0), xs, kind='dupire')
    exact = np.where(xs >= 0, 1.0, np.where(xs > -1 / np.sqrt(5), (1 + np.sqrt(5) * xs) ** 2, 0.0))
    assert np.max(np.abs(phi_hat - exact)) < 2e-3
    assert np.allclose(phi_hat[xs >= 0], 1.0, rtol=0.0, atol=1e-14)


def test_constraint_gamma_curvature_and_sign():
    model = ImpactModel(0.2, 0.1, eps_margin=0.5)
    xs = np.linspace(-1.0, 1.0, 129)
    dx = xs[1] - xs[0]
    lower = np.diff(build_gamma(model, xs, kind='constraint', eps_sign=-1.0), 2) / dx ** 2
    upper = np.diff(build_gamma(model, xs, kind='constraint', eps_sign=1.0), 2) / dx ** 2
    assert np.allclose(lower, 10.0 - 1.0, atol=1e-6)
    assert np.allclose(upper, 10.0 + 1.0, atol=1e-6)
    assert np.allclose(build_gamma(model, xs, kind='dupire'), model.c_upper * xs ** 2)
    try:
        build_gamma(model, xs, kind='cubic')
        assert False, "unknown kind accepted"
    except DomainError:
        pass


def test_boundary_contact_detected():
    model = ImpactModel(0.2, 0.1, c_upper=0.01)
    xs = np.linspace(-1.0, 1.0, 101)
    _, _, report = facelift(model, table_payoff(xs, np.abs(xs)), xs, kind='dupire')
    assert report['boundary_contact'] == {'left': True, 'right': True}
    contact = boundary_contact(xs, -xs ** 2, -xs ** 2)
    assert contact == {'left': False, 'right': False}


def test_terminal_grid_validation_and_growth():
    xs = np.linspace(-2.0, 2.0, 5)
    tg = TerminalGrid(xs=xs, phi=np.abs(xs), gamma_fn=xs ** 2)
    assert abs(tg.growth_constant - 2.0 / 3.0) < 1e-12
    try:
        TerminalGrid(xs=xs, phi=np.abs(xs), gamma_fn=xs[:-1])
        assert False, "mismatched gamma accepted"
    except DomainError:
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
