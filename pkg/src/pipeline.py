"""
Experiment Pipeline
Runs face-lift, HJB and DP solves, the duality cross-check, hedge simulation and the
functional-calculus checks for one config, and persists their artifacts
"""

import argparse
import logging
import os
import sys
import time

import numpy as np
import pandas as pd

from data.artifacts import (append_run_log, surface_cache_path, write_csv, write_json,
                            write_manifest)
from data.config import load_config
from models import __version__
from models.dual_dp import check_dpp, dp_grids_from_config, forward_budget, solve_dp
from models.errors import (ConfigError, DegenerateParabolicityError, DomainError, ImpaktError,
                           NumericalHealthError, PreconditionError)
from models.facelift import build_gamma, facelift, facelift_table
from models.functional_calc import (CostFrechet, concave_family, dupire_vertical, eval_frechet,
                                    gradient_identity, ito_residual, monotone_violation_rate,
                                    simulate_martingale)
from models.hedge_engine import (martingale_check, paths_frame, primal_consistency,
                                 refinement_rates, simulate_optimal)
from models.hjb_solver import ValueSurface, comparison_bounds, diagnostics, solve
from models.payoffs import table_payoff

logger = logging.getLogger(__name__)

COMMANDS = ('facelift', 'solve-hjb', 'solve-dp', 'duality-check', 'hedge', 'functional-check', 'all')
# first match wins: a degenerate curvature met while solving is not a config problem
EXIT_CODES = {DegenerateParabolicityError: 3, ConfigError: 2, DomainError: 2, PreconditionError: 3,
              NumericalHealthError: 4}


def exit_code(error):
    """Process exit status for an ImpaktError"""
    return next((c for cls, c in EXIT_CODES.items() if isinstance(error, cls)), 1)


class ExperimentRunner:
    """Runs pipeline commands for one resolved ExperimentConfig"""

    def __init__(self, config, out_dir=None, strict=False):
        """
        Initialize runner

        Args:
            config: ExperimentConfig
            out_dir: artifact directory (defaults to outputs.directory)
            strict: escalate numerical health warnings to errors
        """
        self.config = config
        self.out_dir = out_dir or config.outputs.directory
        self.strict = strict
        self.model = config.build_model()
        self.payoff = config.build_payoff()
        self.xs = config.x_nodes()
        self.wall_times = {}
        self.summary = {}
        self._lifted = None
        self._surface = None
        self._dp = None
        self._grids = None
        self._ledger = None
        os.makedirs(self.out_dir, exist_ok=True)

    def _path(self, name):
        return os.path.join(self.out_dir, name)

    def _require_markovian(self, command):
        if not self.payoff.is_markovian:
            raise ConfigError(f"payoff.family: '{command}' needs a Markovian payoff, "
                              f"got '{self.payoff.name}'")

    # ------------------------------------------------------------------
    # commands
    # ------------------------------------------------------------------
    def facelift(self):
        """Face-lift the payoff on the solver grid; writes facelift.csv"""
        self._require_markovian('facelift')
        if self._lifted is None:
            print("🔧 Face-lifting terminal payoff...")
            tg, phi_hat, report = facelift(self.model, self.payoff, self.xs,
                                           kind=self.config.grid.gamma_kind,
                                           eps_sign=self.config.model.eps_sign)
            if (report['boundary_contact']['left'] or report['boundary_contact']['right']) and self.strict:
                raise PreconditionError("grid: face-lift hull touches the domain boundary; widen x_min/x_max")
            write_csv(self._path('facelift.csv'),
                      pd.DataFrame({'x': tg.xs, 'phi': tg.phi, 'gamma': tg.gamma_fn, 'phi_hat': phi_hat}))
            self._lifted = (tg, phi_hat, report)
            self.summary['facelift'] = {'lifted_nodes': report['lifted_nodes'],
                                        'max_lift': report['max_lift']}
            print(f"✅ Face-lift done: {report['lifted_nodes']} nodes lifted, max lift {report['max_lift']:.6g}")
        return self._lifted

    def solve_hjb(self):
        """Solve (or reload) the value surface; writes value_surface.csv and diagnostics.json"""
        self._require_markovian('solve-hjb')
        if self._surface is not None:
            return self._surface
        _, phi_hat, lift_report = self.facelift()
        cache = surface_cache_path(self.out_dir, self.config.config_hash)
        if os.path.exists(cache):
            print(f"📂 Loading cached value surface from {cache}")
            surface = ValueSurface.load(cache)
            worst = surface.clamp_stats.get('worst_layer_share', 0.0)
            threshold = self.config.grid.clamp_fraction
            if self.strict and worst > threshold:
                raise NumericalHealthError(
                    f"cached surface has the clamp active on {worst:.1%} of interior nodes in some layer "
                    f"(threshold {threshold:.1%}); remove {cache} or relax --strict")
        else:
            grid = self.config.solver_grid()
            print(f"🔧 Solving HJB on {len(grid.x_nodes)} x {grid.n_steps + 1} grid...")
            surface = solve(self.model, phi_hat, grid, clamp_fraction=self.config.grid.clamp_fraction,
                            strict=self.strict)
            surface.save(cache)
            print(f"💾 Value surface cached to {cache}")

        report = diagnostics(surface, self.model)
        report['comparison'] = comparison_bounds(surface, self.model, phi_hat)
        report['boundary_contact'] = lift_report['boundary_contact']
        x0 = self.config.grid.x0
        report['v0'] = surface.value_at(x0)
        report['dv0'] = surface.gradient_at(x0)
        write_csv(self._path('value_surface.csv'), surface.to_frame(every=self.config.outputs.surface_every))
        write_json(self._path('diagnostics.json'), report)
        self._surface = surface
        self.summary['solve-hjb'] = {'v0': report['v0'], 'dv0': report['dv0'],
                                     'clamped_share': report['clamp']['clamped_share']}
        print(f"✅ HJB solved: v(0, {x0}) = {report['v0']:.8f}")
        return surface

    def _dp_grids(self):
        if self._grids is None:
            self._grids = dp_grids_from_config(self.config.dp, self.config.grid, self.config.model.maturity)
        return self._grids

    def _dp_terminal(self, grids):
        kind, eps_sign = self.config.grid.gamma_kind, self.config.model.eps_sign
        if not self.payoff.is_markovian:
            table = self.payoff.augmented_terminal(grids.x_nodes, grids.m_nodes(self.payoff)[-1])
            return facelift_table(self.model, grids.x_nodes, table, kind=kind, eps_sign=eps_sign)
        _, phi_hat, _ = facelift(self.model, self.payoff, grids.x_nodes, kind=kind, eps_sign=eps_sign)
        return phi_hat

    def solve_dp(self):
        """Dynamic programme and DPP residual; writes dp_value.csv and dpp_residual.json"""
        if self._dp is not None:
            return self._dp
        grids = self._dp_grids()
        terminal = self._dp_terminal(grids)
        print(f"🔧 Solving DP on {len(grids.x_nodes)} nodes, {len(grids.t_nodes) - 1} steps, "
              f"{len(grids.controls.a_values)} controls...")
        solution = solve_dp(self.model, self.payoff, grids, terminal=terminal,
                            max_extrapolation=self.config.dp.max_extrapolation)
        write_csv(self._path('dp_value.csv'), solution.to_frame(every=self.config.outputs.surface_every))

        dpp = check_dpp(self.model, self.payoff, grids, self.config.dp.t_split, terminal=terminal,
                        regrid=self.config.dp.regrid, max_extrapolation=self.config.dp.max_extrapolation)
        dpp['tolerance'] = self.config.dp.tolerance
        dpp['passes'] = dpp['residual'] <= self.config.dp.tolerance
        dpp['extrapolation'] = solution.extrapolation
        if solution.markovian:
            dpp['budget'] = forward_budget(solution, self.model, n_paths=min(self.config.sim.n_paths, 20000),
                                           seed=self.config.sim.seed, x0=self.config.grid.x0)
        write_json(self._path('dpp_residual.json'), dpp)
        if not dpp['passes']:
            message = f"DPP residual {dpp['residual']:.3e} above tolerance {self.config.dp.tolerance:.1e}"
            if self.strict:
                raise NumericalHealthError(message)
            print(f"⚠️ {message}")

        self._dp = solution
        v0 = solution.value_at(self.config.grid.x0)
        self.summary['solve-dp'] = {'v0': v0, 'dpp_residual': dpp['residual']}
        print(f"✅ DP solved: v(0, {self.config.grid.x0}) = {v0:.8f}, DPP residual {dpp['residual']:.3e}")
        return solution

    def duality_check(self):
        """Compare HJB and DP values and policies at t = 0; writes duality.json"""
        self._require_markovian('duality-check')
        surface = self.solve_hjb()
        solution = self.solve_dp()
        x0 = self.config.grid.x0
        v_hjb = surface.value_at(x0)
        v_dp = solution.value_at(x0)
        diff = abs(v_hjb - v_dp)

        # policy comparison over the bulk of the distribution
        sigma = float(np.max(self.model.sigma0(0.0, self.xs)))
        window = np.abs(solution.x_nodes - x0) <= 2.0 * sigma * np.sqrt(self.config.model.maturity)
        a_hjb = surface.interp('a_star', 0, solution.x_nodes[window])
        a_dp = solution.policy[0][window, 0]
        tolerance = self.config.dp.tolerance
        report = {
            'x0': x0,
            'v_hjb': v_hjb,
            'v_dp': v_dp,
            'abs_diff': diff,
            'tolerance': tolerance,
            'passes': diff <= tolerance,
            'policy_max_deviation': float(np.max(np.abs(a_hjb - a_dp))),
            'control_spacing': self._dp_grids().controls.spacing,
        }
        report['policy_within_spacing'] = report['policy_max_deviation'] <= report['control_spacing']
        write_json(self._path('duality.json'), report)
        self.summary['duality-check'] = {'abs_diff': diff, 'passes': report['passes']}
        if report['passes']:
            print(f"✅ Duality check passed: |v_hjb - v_dp| = {diff:.3e}")
        else:
            message = f"|v_hjb - v_dp| = {diff:.3e} above tolerance {tolerance:.1e}"
            if self.strict:
                raise NumericalHealthError(message)
            print(f"⚠️ {message}")
        return report

    def hedge(self):
        """Simulate the optimal hedge; writes hedge_summary.json and hedge_paths.csv"""
        self._require_markovian('hedge')
        surface = self.solve_hjb()
        cfg = self.config.sim.build()
        x0 = self.config.grid.x0
        print(f"🚀 Simulating {cfg.n_paths} paths x {cfg.n_steps} steps (seed {cfg.seed})...")
        ledger = simulate_optimal(surface, self.model, cfg, x0, payoff=self.payoff, strict=self.strict)
        report = ledger.summary()
        report['martingale'] = martingale_check(surface, self.model, cfg, x0, ledger=ledger)
        report['primal_consistency'] = primal_consistency(ledger, self.model)

        counts = [n for n in (cfg.n_steps // 4, cfg.n_steps) if n >= 1 and surface.n_steps % n == 0]
        if len(counts) == 2 and counts[0] != counts[1]:
            report['refinement'] = refinement_rates(surface, self.model, cfg, x0, counts)
        write_json(self._path('hedge_summary.json'), report)
        write_csv(self._path('hedge_paths.csv'), paths_frame(ledger, every=self.config.outputs.path_every))

        self._ledger = ledger
        self.summary['hedge'] = {'error_mean': report['error_mean'], 'error_se': report['error_se'],
                                 'error_abs_mean': report['error_abs_mean']}
        print(f"✅ Hedge simulated: mean e = {report['error_mean']:.3e} "
              f"(SE {report['error_se']:.1e}), mean|e| = {report['error_abs_mean']:.3e}")
        return report

    def functional_check(self):
        """Frechet, A-process and Ito-residual checks; writes functional_checks.json"""
        fc = self.config.functional
        T = self.config.model.maturity
        x0 = self.config.grid.x0
        sigma = float(np.max(self.model.sigma0(0.0, self.xs)))
        report = {}

        print("🔧 Running functional-calculus checks...")
        rates = {}
        for n_steps in (max(fc.n_steps // 4, 1), fc.n_steps):
            t_nodes, z = simulate_martingale(fc.n_paths, n_steps, sigma, self.config.sim.seed, T, x0)
            fn, grad = concave_family(fc.family, t_nodes, c=fc.curvature)
            K = ito_residual(fn, grad, z, t_nodes)
            rates[str(n_steps)] = monotone_violation_rate(K, fc.tolerance)
        report['monotone_violation_rate'] = rates
        fn, grad = concave_family('affine', t_nodes, slope=2.0, intercept=1.0)
        report['affine_residual'] = float(np.max(np.abs(ito_residual(fn, grad, z, t_nodes))))

        rng = np.random.Generator(np.random.Philox(key=[self.config.sim.seed, 1]))
        h1, h2 = rng.standard_normal((2,) + z.shape)
        report['frechet_linearity'] = float(np.max(np.abs(
            eval_frechet(self.payoff, z, h1 + h2, t_nodes)
            - eval_frechet(self.payoff, z, h1, t_nodes) - eval_frechet(self.payoff, z, h2, t_nodes))))
        report['frechet_total_variation'] = float(np.max(self.payoff.total_variation(z, t_nodes)))

        if self.payoff.is_markovian:
            surface = self.solve_hjb()
            _, phi_hat, _ = self.facelift()
            lifted = table_payoff(self.xs, phi_hat, maturity=T, name='facelifted')
            cost = CostFrechet.from_model(self.model)
            ledger = self._ledger
            if not cost.zero:
                # the compensator needs every path, not just the recorded sample
                n = min(self.config.sim.n_paths, fc.n_paths)
                n -= n % 2
                sim_cfg = self.config.sim.build(n_paths=n, record_paths=n)
                ledger = simulate_optimal(surface, self.model, sim_cfg, x0, strict=self.strict)
            elif ledger is None:
                ledger = simulate_optimal(surface, self.model, self.config.sim.build(), x0, strict=self.strict)
            report['gradient_identity'] = gradient_identity(lifted, cost, ledger, x0, surface)

            point = np.array([[x0]])
            report['dupire_vertical'] = {
                'estimate': float(dupire_vertical(lambda k, p: surface.interp('v', k, p[..., k]), 0, point)[0]),
                'surface_dv': surface.gradient_at(x0),
            }
            if ledger.paths:
                stride = surface.n_steps // (len(ledger.t_nodes) - 1)
                xp = ledger.paths['x']
                running = np.concatenate([np.zeros((len(xp), 1)), np.cumsum(ledger.paths['cost'], axis=1)], axis=1)
                K = ito_residual(lambda k, p: surface.interp('v', k * stride, p[..., k]),
                                 lambda k, p: surface.interp('dv', k * stride, p[..., k]),
                                 xp, ledger.t_nodes, ell=lambda k, p: running[:, k])
                report['surface_residual'] = {'K_T_mean': float(np.mean(K[:, -1])),
                                              'K_T_se': float(np.std(K[:, -1], ddof=1) / np.sqrt(len(xp)))
                                              if len(xp) > 1 else None,
                                              'n_paths': int(len(xp))}

        write_json(self._path('functional_checks.json'), report)
        self.summary['functional-check'] = {'monotone_violation_rate': rates,
                                            'affine_residual': report['affine_residual']}
        print("✅ Functional checks done")
        return report

    def run(self, command):
        """Run one command (or all of them); returns the command's report"""
        if command not in COMMANDS:
            raise ConfigError(f"command: unknown command '{command}' (expected one of {COMMANDS})")
        steps = COMMANDS[:-1] if command == 'all' else (command,)
        result = None
        for step in steps:
            if command == 'all' and not self.payoff.is_markovian and step in (
                    'facelift', 'solve-hjb', 'duality-check', 'hedge'):
                print(f"⚠️ Skipping {step}: payoff '{self.payoff.name}' is path dependent")
                continue
            start = time.perf_counter()
            result = getattr(self, step.replace('-', '_'))()
            self.wall_times[step] = time.perf_counter() - start
        return result


def build_parser():
    parser = argparse.ArgumentParser(prog='impakt',
                                     description='Hedging under permanent price impact: solvers and checks')
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', required=True, help='experiment config file')
    parser.add_argument('--strict', action='store_true', help='escalate health warnings to errors')
    parser.add_argument('--out', default=None, help='artifact directory (overrides outputs.directory)')
    parser.add_argument('--verbose', action='store_true', help='debug logging')
    return parser


def main(argv=None):
    """Command-line entry point; returns the process exit status"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    out_dir = args.out
    record = {'command': args.command, 'config': args.config, 'strict': args.strict}
    try:
        print(f"📂 Loading config {args.config}")
        config = load_config(args.config)
        out_dir = out_dir or config.outputs.directory
        record['config_hash'] = config.config_hash
        runner = ExperimentRunner(config, out_dir=out_dir, strict=args.strict)
        runner.run(args.command)
        write_manifest(out_dir, config, __version__, [args.command], runner.wall_times, runner.summary)
        record.update(status='ok', summary=runner.summary)
        append_run_log(out_dir, record)
        print(f"💾 Artifacts written to {out_dir}")
        return 0
    except ImpaktError as e:
        code = exit_code(e)
        print(f"❌ {type(e).__name__}: {e}")
        record.update(status='error', error=str(e), exit_code=code)
        append_run_log(out_dir or 'results', record)
        return code


if __name__ == '__main__':
    sys.exit(main())
