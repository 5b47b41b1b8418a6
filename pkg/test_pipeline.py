"""
End-to-end tests for the command-line pipeline on small grids
"""

import os
import shutil
import sys
import tempfile

import pandas as pd

sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

from data.artifacts import read_json, surface_cache_path
from data.config import load_config
from models.errors import (ConfigError, DegenerateParabolicityError, DomainError, ImpaktError,
                           NumericalHealthError, PreconditionError)
from models.hjb_solver import ValueSurface
from pipeline import ExperimentRunner, exit_code, main

CONFIG_DIR = os.path.join(os.path.dirname(__file__), 'configs')

SMALL_CALL = """
model.sigma0.family = constant
model.sigma0.value = 0.2
model.f.family = constant
model.f.value = 0.1
model.eps_margin = 2.5
payoff.family = call(1.0)
grid.x0 = 1.0
grid.x_min = -0.2
grid.x_max = 2.2
grid.n_x = 121
dp.n_t = 20
dp.n_controls = 41
dp.tolerance = 1e-2
sim.n_paths = 512
sim.n_steps = 50
sim.seed = 1
sim.block_size = 256
functional.n_paths = 256
functional.n_steps = 64
outputs.surface_every = 50
outputs.path_every = 5
"""

SMALL_ASIAN = """
model.eps_margin = 2.5
payoff.family = asian_call(1.0)
grid.x0 = 1.0
grid.x_min = 0.0
grid.x_max = 2.0
grid.n_x = 41
dp.n_t = 10
dp.n_controls = 9
dp.n_m = 11
dp.a_max = 0.8
dp.max_extrapolation = 0.5
sim.n_paths = 64
sim.n_steps = 10
sim.seed = 3
functional.n_paths = 64
functional.n_steps = 8
"""

ARTIFACTS = ('facelift.csv', 'value_surface.csv', 'diagnostics.json', 'dp_value.csv', 'dpp_residual.json',
             'duality.json', 'hedge_summary.json', 'hedge_paths.csv', 'functional_checks.json',
             'manifest.json', os.path.join('logs', 'runs.log'))


def write_config(directory, text, name='experiment.cfg'):
    path = os.path.join(directory, name)
    with open(path, 'w', encoding='utf-8') as fh:
        fh.write(text)
    return path


def test_facelift_command_writes_lifted_digital():
    tmp = tempfile.mkdtemp()
    try:
        config = load_config(os.path.join(CONFIG_DIR, 'facelift_digital.cfg'))
        ExperimentRunner(config, out_dir=tmp).facelift()
        frame = pd.read_csv(os.path.join(tmp, 'facelift.csv'))
        assert list(frame.columns) == ['x', 'phi', 'gamma', 'phi_hat']
        row = frame.iloc[(frame['x'] + 0.2).abs().idxmin()]
        assert abs(row['phi_hat'] - 0.3056) < 2e-3
        assert (frame['phi_hat'] >= frame['phi'] - 1e-12).all()
    finally:
        shutil.rmtree(tmp)


def test_exit_codes():
    tmp = tempfile.mkdtemp()
    try:
        bad_family = write_config(tmp, "payoff.family = swaption\nsim.seed = 1\n", 'bad.cfg')
        assert main(['facelift', '--config', bad_family, '--out', tmp]) == 2
        assert os.path.exists(os.path.join(tmp, 'logs', 'runs.log'))

        unstable = write_config(tmp, SMALL_CALL + "grid.n_t = 50\n", 'unstable.cfg')
        assert main(['solve-hjb', '--config', unstable, '--out', tmp]) == 3

        asian = write_config(tmp, SMALL_ASIAN, 'asian.cfg')
        assert main(['hedge', '--config', asian, '--out', tmp]) == 2
    finally:
        shutil.rmtree(tmp)


def test_all_command_writes_every_artifact_reproducibly():
    tmp = tempfile.mkdtemp()
    try:
        path = write_config(tmp, SMALL_CALL)
        first, second = os.path.join(tmp, 'first'), os.path.join(tmp, 'second')
        assert main(['all', '--config', path, '--out', first]) == 0
        assert main(['all', '--config', path, '--out', second]) == 0
        for name in ARTIFACTS:
            assert os.path.exists(os.path.join(first, name)), name

        manifest = read_json(os.path.join(first, 'manifest.json'))
        assert manifest['summary'] == read_json(os.path.join(second, 'manifest.json'))['summary']
        assert manifest['seeds'] == {'sim': 1}
        assert len(manifest['config_hash']) == 64

        duality = read_json(os.path.join(first, 'duality.json'))
        assert abs(duality['v_hjb'] - manifest['summary']['solve-hjb']['v0']) < 1e-9
        checks = read_json(os.path.join(first, 'functional_checks.json'))
        assert checks['affine_residual'] < 1e-10
        assert all(rate == 0.0 for rate in checks['monotone_violation_rate'].values())
        assert 'gradient_identity' in checks and 'surface_residual' in checks
    finally:
        shutil.rmtree(tmp)


def test_cached_surface_is_reused():
    tmp = tempfile.mkdtemp()
    try:
        config = load_config(write_config(tmp, SMALL_CALL))
        out = os.path.join(tmp, 'out')
        first = ExperimentRunner(config, out_dir=out).solve_hjb()
        again = ExperimentRunner(config, out_dir=out).solve_hjb()
        assert (first.v == again.v).all()
        assert os.path.isdir(os.path.join(out, 'cache'))
    finally:
        shutil.rmtree(tmp)


def test_strict_run_rechecks_cached_clamp_share():
    tmp = tempfile.mkdtemp()
    try:
        config = load_config(write_config(tmp, SMALL_CALL))
        out = os.path.join(tmp, 'out')
        ExperimentRunner(config, out_dir=out).solve_hjb()
        cache = surface_cache_path(out, config.config_hash)
        surface = ValueSurface.load(cache)
        surface.clamp_stats['worst_layer_share'] = 1.0
        surface.save(cache)

        assert ExperimentRunner(config, out_dir=out).solve_hjb().clamp_stats['worst_layer_share'] == 1.0
        try:
            ExperimentRunner(config, out_dir=out, strict=True).solve_hjb()
            assert False, "over-clamped cached surface accepted under strict"
        except NumericalHealthError as e:
            assert 'cached surface' in str(e)
    finally:
        shutil.rmtree(tmp)


def test_dp_policy_within_one_control_spacing_of_hjb():
    tmp = tempfile.mkdtemp()
    try:
        config = load_config(write_config(tmp, SMALL_CALL), overrides={'dp.n_t': '50'})
        report = ExperimentRunner(config, out_dir=os.path.join(tmp, 'out')).duality_check()
        assert 0.0 < report['control_spacing'] <= 0.021
        assert report['policy_within_spacing'], report['policy_max_deviation']
        assert report['passes']
    finally:
        shutil.rmtree(tmp)


def test_exit_code_mapping():
    assert exit_code(DegenerateParabolicityError("z >= gamma2")) == 3
    assert exit_code(DomainError("bad argument")) == 2
    assert exit_code(ConfigError("bad key")) == 2
    assert exit_code(PreconditionError("CFL")) == 3
    assert exit_code(NumericalHealthError("clamp")) == 4
    assert exit_code(ImpaktError("other")) == 1


def test_all_command_on_path_dependent_payoff():
    tmp = tempfile.mkdtemp()
    try:
        path = write_config(tmp, SMALL_ASIAN)
        assert main(['all', '--config', path, '--out', tmp]) == 0
        for name in ('dp_value.csv', 'dpp_residual.json', 'functional_checks.json', 'manifest.json'):
            assert os.path.exists(os.path.join(tmp, name)), name
        assert not os.path.exists(os.path.join(tmp, 'value_surface.csv'))
        frame = pd.read_csv(os.path.join(tmp, 'dp_value.csv'))
        assert 'm' in frame.columns
    finally:
        shutil.rmtree(tmp)


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
