"""Command-line entry point: preprocess, fit-gle, diagnose, predict, resilience, simulate, runs"""
import argparse
import logging
import sys
from dataclasses import replace
from datetime import datetime
from functools import partial
from pathlib import Path

import numpy as np
from rich.console import Console
from rich.table import Table

from database.operations import RunOperations
from utils.bayes_core import save_ensemble
from utils.config import SIMULATION_KINDS, resolve_config, validate_run_config
from utils.errors import AnalysisError, ArtifactMissingError, ConfigValidationError
from utils.forecast_diagnostics import (compare_acf, compare_distributions, run_forecast_benchmark, save_curve,
                                        save_density)
from utils.gle_fit import BIN_MODES, fit_gle, load_gle_model, memory_aggregation, save_gle_model
from utils.helpers import (config_hash, export_to_json, file_sha256, format_date, package_versions,
                           run_directory_name)
from utils.logging_config import setup_logging
from utils.market_data import WINDOW_MODES, build_correlation_series, load_series_values, save_correlation_series
from utils.recipes import recipes
from utils.resilience import (MODEL_TAGS, PRIOR_PRESETS, default_priors, plan_windows, run_resilience,
                              save_resilience_track)
from utils.sde_sim import (RNG_ALGORITHM, SimConfig, SyntheticSystem, save_trajectory, simulate_ensemble, simulate_gle,
                           simulate_langevin, simulate_synthetic, simulate_two_scale, synthetic_fixed_point)

logger = logging.getLogger(__name__)
console = Console()

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2

MANIFEST_NAME = 'manifest.json'
REGISTRY_NAME = 'runs.db'

# inputs a command reads, by RunConfig.inputs field
REQUIRED_INPUTS = {
    'preprocess': ('prices',),
    'fit-gle': ('series',),
    'diagnose': ('series', 'model'),
    'predict': ('series',),
    'resilience': ('series',),
    'simulate': (),
}

# command-line flag -> dotted RunConfig field
FLAG_FIELDS = {
    'seed': 'seed',
    'out': 'output',
    'threads': 'threads',
    'prices': 'inputs.prices',
    'series': 'inputs.series',
    'model': 'inputs.model',
    'n': 'preprocess.n',
    'tau': 'preprocess.tau',
    'shift': 'preprocess.shift',
    'window_mode': 'preprocess.window_mode',
    'max_missing_fraction': 'preprocess.max_missing_fraction',
    'n_bins': 'gle.n_bins',
    'bin_mode': 'gle.bin_mode',
    'k_max': 'gle.k_max',
    'plateau_tol': 'gle.plateau_tol',
    'max_lag': 'diagnose.max_lag',
    'sim_steps': 'diagnose.sim_steps',
    'grid_points': 'diagnose.grid_points',
    'estimate': 'forecast.estimate',
    'model_tag': 'resilience.model_tag',
    'window_size': 'resilience.window_size',
    'window_shift': 'resilience.window_shift',
    'gamma': 'resilience.gamma',
    'priors': 'resilience.priors',
    'detrend_width': 'resilience.detrend_width',
    'kind': 'simulate.kind',
    'n_steps': 'simulate.n_steps',
    'n_paths': 'simulate.n_paths',
}

# which RunConfig block the shared --walkers/--steps/--burn/--thin/--step-h flags address
MCMC_SECTION = {'fit-gle': 'gle', 'diagnose': 'gle', 'predict': 'forecast', 'resilience': 'resilience'}
STEP_H_SECTION = {'fit-gle': 'gle', 'diagnose': 'gle', 'predict': 'gle', 'resilience': 'resilience',
                  'simulate': 'simulate'}


def _mcmc(settings, seed):
    """Fall back to the run seed when the sampler block carries none"""
    return settings if settings.seed is not None else replace(settings, seed=seed)


def _output(outputs, kind, path):
    outputs.append((kind, Path(path)))
    return Path(path)


def cmd_preprocess(cfg, run_dir):
    p = cfg.preprocess
    series = build_correlation_series(cfg.inputs.prices, n=p.n, tau=p.tau, shift=p.shift,
                                      window_mode=p.window_mode, max_missing_fraction=p.max_missing_fraction)
    outputs = []
    csv_path, sidecar = save_correlation_series(series, run_dir / 'correlation.csv', {'seed': cfg.seed})
    _output(outputs, 'correlation_series', csv_path)
    _output(outputs, 'metadata', sidecar)

    return {
        'success': True,
        'outputs': outputs,
        'summary': {
            'values': len(series),
            'dropped_assets': len(series.dropped_assets),
            'skipped_windows': len(series.skipped_centers),
            'c_bar_range': [float(series.values.min()), float(series.values.max())] if len(series) else None,
        },
    }


def cmd_fit_gle(cfg, run_dir):
    g = cfg.gle
    values = load_series_values(cfg.inputs.series)
    fit = fit_gle(values, n_bins=g.n_bins, k_max=g.k_max, mode=g.bin_mode, settings=_mcmc(g.mcmc, cfg.seed),
                  step_h=g.step_h)

    aggregation = memory_aggregation(fit.ensemble, g.k_max, g.plateau_tol) if g.k_max >= 1 else None
    outputs = []
    model_path = _output(outputs, 'gle_model', run_dir / 'gle_model.json')
    result = export_to_json({
        'map_model': fit.map_model.as_dict(),
        'mean_model': fit.mean_model.as_dict(),
        'coefficients': fit.coefficient_table(),
        'memory_aggregation': aggregation.as_dict() if aggregation else None,
        'n_transitions': fit.n_transitions,
        'acceptance_rate': fit.ensemble.acceptance_rate,
        'autocorr_time': fit.autocorr_time,
        'seed': fit.ensemble.seed,
    }, model_path)
    if not result['success']:
        raise OSError(result['error'])

    save_gle_model(fit.mean_model, _output(outputs, 'gle_mean_model', run_dir / 'gle_mean_model.json'))
    save_curve(_output(outputs, 'coefficients', run_dir / 'coefficients.csv'), {
        column: [row[column] for row in fit.coefficient_table()]
        for column in ('name', 'mean', 'map', 'ci_lo', 'ci_hi', 'excludes_zero')
    })
    data_path, header_path = save_ensemble(fit.ensemble, run_dir / 'chains', {'k_max': g.k_max, 'n_bins': g.n_bins})
    _output(outputs, 'chains', data_path)
    _output(outputs, 'chains_header', header_path)

    return {
        'success': True,
        'outputs': outputs,
        'summary': {
            'acceptance_rate': fit.ensemble.acceptance_rate,
            'retained_samples': fit.ensemble.n_retained,
            'plateau_estimate': aggregation.plateau_estimate if aggregation else None,
        },
        'table': fit.kernel_table(),
    }


def cmd_diagnose(cfg, run_dir):
    d = cfg.diagnose
    values = load_series_values(cfg.inputs.series)
    model = load_gle_model(cfg.inputs.model)

    outputs = []
    acf_curves = compare_acf(model, values, n_steps=d.sim_steps, max_lag=d.max_lag, seed=cfg.seed)
    save_curve(_output(outputs, 'acf', run_dir / 'acf.csv'), acf_curves)

    densities = compare_distributions(model, values, lags=d.increment_lags, n_steps=d.sim_steps, seed=cfg.seed,
                                      grid_points=d.grid_points)
    for name, (data_kde, model_kde) in densities.items():
        save_density(_output(outputs, 'density', run_dir / f'kde_{name}_data.csv'), data_kde)
        save_density(_output(outputs, 'density', run_dir / f'kde_{name}_model.csv'), model_kde)

    short = acf_curves['abs_diff'][1:min(10, d.max_lag) + 1]
    return {
        'success': True,
        'outputs': outputs,
        'summary': {
            'model_k_max': model.k_max,
            'simulated_steps': d.sim_steps,
            'max_acf_deviation_lag_1_10': float(short.max()),
        },
    }


def cmd_predict(cfg, run_dir):
    f = cfg.forecast
    values = load_series_values(cfg.inputs.series)
    settings = _mcmc(f.mcmc, cfg.seed)

    reports = [
        run_forecast_benchmark(values, alpha, methods=f.methods, settings=settings, n_bins=cfg.gle.n_bins,
                               bin_mode=cfg.gle.bin_mode, estimate=f.estimate, step_h=cfg.gle.step_h,
                               n_jobs=cfg.threads)
        for alpha in f.alphas
    ]

    outputs = []
    report_path = _output(outputs, 'forecast_report', run_dir / 'forecast.json')
    result = export_to_json({'reports': [r.as_dict(include_predictions=True) for r in reports],
                             'methods': list(f.methods), 'estimate': f.estimate}, report_path)
    if not result['success']:
        raise OSError(result['error'])

    rows = []
    for method in f.methods:
        row = {'method': method}
        for report in reports:
            row[f'in {report.alpha:.0%}'] = report.rho2_in.get(method)
            row[f'out {report.alpha:.0%}'] = report.rho2_out.get(method)
        rows.append(row)
    save_curve(_output(outputs, 'rho2_table', run_dir / 'rho2.csv'),
               {key: [row[key] for row in rows] for key in rows[0]})

    failures = {f'{r.alpha:.2f}/{method}': error for r in reports for method, error in r.errors.items()}
    return {'success': True, 'outputs': outputs, 'summary': {'failed_methods': failures}, 'table': rows}


def cmd_resilience(cfg, run_dir):
    r = cfg.resilience
    values = load_series_values(cfg.inputs.series)
    plan = plan_windows(values.size, r.window_size, r.window_shift)
    priors = PRIOR_PRESETS[r.priors] if r.priors else default_priors(r.model_tag)

    track = run_resilience(values, model_tag=r.model_tag, plan=plan, priors=priors,
                           settings=_mcmc(r.mcmc, cfg.seed), gamma=r.gamma, step_h=r.step_h,
                           detrend_width=r.detrend_width, n_jobs=cfg.threads)

    outputs = []
    csv_path, sidecar = save_resilience_track(track, run_dir / 'resilience.csv', {'seed': cfg.seed})
    _output(outputs, 'resilience_track', csv_path)
    _output(outputs, 'metadata', sidecar)

    finite = track.zeta_mean[np.isfinite(track.zeta_mean)]
    return {
        'success': True,
        'outputs': outputs,
        'summary': {
            'windows': len(track),
            'gaps': len(track.gaps),
            'negative_zeta_windows': int((finite < 0).sum()),
            'cb_below_zero_windows': int((track.zeta_ci_upper < 0).sum()),
        },
    }


def _linear_drift(rate, x):
    return -rate * x


def _constant(value, x):
    return value


def _simulation_job(cfg):
    """Simulator callable plus keyword arguments for the configured kind"""
    s = cfg.simulate
    if s.kind == 'langevin':
        return simulate_langevin, {'drift': partial(_linear_drift, s.langevin_rate),
                                   'diffusion': partial(_constant, s.langevin_diffusion)}
    if s.kind == 'gle':
        return simulate_gle, {'model': load_gle_model(cfg.inputs.model)}
    if s.kind == 'two-scale':
        return simulate_two_scale, {'theta': list(s.theta)}
    system = SyntheticSystem(coupling_start=s.coupling_start, coupling_end=s.coupling_end,
                             ou_rate=s.ou_rate, ou_diffusion=s.ou_diffusion)
    return simulate_synthetic, {'system': system}


def _initial_state(cfg, kwargs):
    s = cfg.simulate
    if s.initial_state is not None:
        return s.initial_state
    if s.kind == 'synthetic':
        return [synthetic_fixed_point(), 0.0]
    if s.kind == 'gle':
        edges = kwargs['model'].bin_edges
        return 0.5 * (edges[0] + edges[-1])
    return 0.0


def cmd_simulate(cfg, run_dir):
    s = cfg.simulate
    simulator, kwargs = _simulation_job(cfg)
    sim_cfg = SimConfig(step_h=s.step_h, n_steps=s.n_steps, seed=cfg.seed, initial_state=_initial_state(cfg, kwargs))

    if s.n_paths == 1:
        trajectories = [simulator(cfg=sim_cfg, **kwargs)]
    else:
        trajectories = simulate_ensemble(simulator, sim_cfg, s.n_paths, n_jobs=cfg.threads, **kwargs)

    outputs = []
    for index, trajectory in enumerate(trajectories):
        name = 'trajectory.csv' if s.n_paths == 1 else f'trajectory_{index:03d}.csv'
        csv_path, sidecar = save_trajectory(trajectory, run_dir / name)
        _output(outputs, 'trajectory', csv_path)
        _output(outputs, 'metadata', sidecar)

    return {
        'success': True,
        'outputs': outputs,
        'summary': {'kind': s.kind, 'paths': len(trajectories), 'points_per_path': len(trajectories[0])},
    }


COMMAND_HANDLERS = {
    'preprocess': cmd_preprocess,
    'fit-gle': cmd_fit_gle,
    'diagnose': cmd_diagnose,
    'predict': cmd_predict,
    'resilience': cmd_resilience,
    'simulate': cmd_simulate,
}


def collect_overrides(command, args):
    """Nested override dictionary from the flags actually given"""
    overrides = {}

    def put(dotted, value):
        node = overrides
        keys = dotted.split('.')
        for key in keys[:-1]:
            node = node.setdefault(key, {})
        node[keys[-1]] = value

    for flag, dotted in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            put(dotted, value)
    if getattr(args, 'kind_arg', None) and getattr(args, 'kind', None) is None:
        put('simulate.kind', args.kind_arg)

    if getattr(args, 'alpha', None):
        put('forecast.alphas', list(args.alpha))
    if getattr(args, 'methods', None):
        put('forecast.methods', [m.strip() for m in args.methods.split(',') if m.strip()])

    section = MCMC_SECTION.get(command)
    if section:
        for flag, key in (('walkers', 'walkers'), ('steps', 'steps'), ('burn', 'n_burn'), ('thin', 'thin')):
            value = getattr(args, flag, None)
            if value is not None:
                put(f'{section}.mcmc.{key}', value)
    if getattr(args, 'step_h', None) is not None and command in STEP_H_SECTION:
        put(f'{STEP_H_SECTION[command]}.step_h', args.step_h)
    return overrides


def required_inputs(command, cfg):
    """Paths the command reads; missing ones raise ArtifactMissingError"""
    names = list(REQUIRED_INPUTS.get(command, ()))
    if command == 'simulate' and cfg.simulate.kind == 'gle':
        names.append('model')

    inputs = {}
    missing = []
    for name in names:
        value = getattr(cfg.inputs, name)
        if not value:
            missing.append(f'inputs.{name} is required for {command}')
        elif not Path(value).is_file():
            missing.append(f'inputs.{name} does not exist: {value}')
        else:
            inputs[name] = Path(value)
    if missing:
        raise ArtifactMissingError('; '.join(missing))
    return inputs


def _make_run_dir(out_root, hash_value):
    base = out_root / run_directory_name(hash_value, datetime.now())
    run_dir, suffix = base, 1
    # same config twice within one second
    while run_dir.exists():
        run_dir = base.with_name(f'{base.name}-{suffix}')
        suffix += 1
    run_dir.mkdir(parents=True)
    return run_dir


def write_manifest(run_dir, command, cfg, hash_value, inputs, outputs, status, summary=None, error=None):
    manifest = {
        'command': command,
        'run_id': run_dir.name,
        'status': status,
        'created_at': datetime.now().isoformat(timespec='seconds'),
        'config': cfg.to_dict(),
        'config_hash': hash_value,
        'seed': cfg.seed,
        'rng': {'simulation': RNG_ALGORITHM, 'sampler': 'numpy RandomState (MT19937) seeded per run'},
        'inputs': [{'name': name, 'path': str(path), 'sha256': file_sha256(path)} for name, path in inputs.items()],
        'outputs': [{'kind': kind, 'path': path.name, 'sha256': file_sha256(path)} for kind, path in outputs],
        'versions': package_versions(),
        'summary': summary or {},
        'error': error,
    }
    result = export_to_json(manifest, run_dir / MANIFEST_NAME)
    if not result['success']:
        raise OSError(result['error'])
    return run_dir / MANIFEST_NAME


def run_command(command, args):
    """Resolve and validate the config, run one command in a fresh run directory, record it"""
    try:
        cfg = resolve_config(args.recipe, args.config, collect_overrides(command, args))
        validation = validate_run_config(cfg, command)
        if not validation['valid']:
            raise ConfigValidationError(validation['errors'])
    except ConfigValidationError as e:
        return {'success': False, 'error': 'invalid configuration', 'errors': e.errors, 'exit_code': EXIT_VALIDATION}

    try:
        inputs = required_inputs(command, cfg)
    except ArtifactMissingError as e:
        return {'success': False, 'error': str(e), 'exit_code': EXIT_RUNTIME}

    out_root = Path(cfg.output)
    hash_value = config_hash({'command': command, 'config': cfg.to_dict(),
                              'inputs': {name: file_sha256(path) for name, path in inputs.items()}})
    try:
        run_dir = _make_run_dir(out_root, hash_value)
        registry = RunOperations(out_root / REGISTRY_NAME)
    except OSError as e:
        return {'success': False, 'error': f'cannot create run directory: {e}', 'exit_code': EXIT_RUNTIME}

    setup_logging(logging.DEBUG if args.verbose else logging.INFO, run_dir / 'run.log')
    registry.register_run(run_dir.name, command, hash_value, cfg.seed, run_dir)
    logger.info('%s run %s (config %s, seed %d)', command, run_dir.name, hash_value, cfg.seed)

    try:
        result = COMMAND_HANDLERS[command](cfg, run_dir)
    except (AnalysisError, OSError, ValueError) as e:
        message = f'{type(e).__name__}: {e}'
        logger.error('%s failed: %s', command, message)
        write_manifest(run_dir, command, cfg, hash_value, inputs, [], 'failed', error=message)
        registry.finish_run(run_dir.name, 'failed', error=message)
        return {'success': False, 'error': message, 'run_dir': str(run_dir), 'exit_code': EXIT_RUNTIME}

    manifest = write_manifest(run_dir, command, cfg, hash_value, inputs, result['outputs'], 'success',
                              summary=result.get('summary'))
    artifacts = [(kind, str(path), file_sha256(path)) for kind, path in result['outputs']]
    artifacts.append(('manifest', str(manifest), file_sha256(manifest)))
    registry.finish_run(run_dir.name, 'success', artifacts=artifacts)

    result.update({'run_id': run_dir.name, 'run_dir': str(run_dir), 'manifest': str(manifest),
                   'exit_code': EXIT_OK})
    return result


def cmd_runs(args):
    out_root = Path(args.out or 'runs')
    registry_path = out_root / REGISTRY_NAME
    if not registry_path.is_file():
        return {'success': True, 'runs': [], 'count': 0, 'exit_code': EXIT_OK}

    registry = RunOperations(registry_path)
    if args.run_id:
        result = registry.get_run(args.run_id)
    elif args.stats:
        result = registry.get_registry_statistics()
    elif args.export:
        result = registry.export_registry()
        if result['success']:
            written = export_to_json(result['data'], args.export)
            result = {'success': written['success'], 'exported': written.get('filename'),
                      'count': len(result['data']['runs']), 'error': written.get('error')}
    elif args.config_hash:
        result = registry.find_by_config_hash(args.config_hash)
    else:
        result = registry.list_runs(command=args.filter_command, limit=args.limit)
    result['exit_code'] = EXIT_OK if result['success'] else EXIT_RUNTIME
    return result


def _print_table(title, rows):
    if not rows:
        return
    table = Table(title=title)
    for column in rows[0]:
        table.add_column(str(column))
    for row in rows:
        table.add_row(*[f'{v:.4g}' if isinstance(v, float) else str(v) for v in row.values()])
    console.print(table)


def report(command, result):
    if not result['success']:
        console.print(f'[bold red]error:[/bold red] {result["error"]}')
        for error in result.get('errors', []):
            console.print(f'  - {error}')
        return

    if command == 'runs':
        if 'statistics' in result:
            stats = result['statistics']
            console.print(f"total runs: {stats['total_runs']}")
            _print_table('by status', [{'status': k, 'runs': v} for k, v in stats['by_status'].items()])
            _print_table('by command', [{'command': k, 'runs': v} for k, v in stats['by_command'].items()])
        elif 'exported' in result:
            console.print(f"exported {result['count']} runs to {result['exported']}")
        elif 'run' in result:
            _print_table('run', [{k: v for k, v in result['run'].items() if k != 'artifacts'}])
            _print_table('artifacts', result['run']['artifacts'])
        else:
            _print_table('registered runs', [
                {'run_id': r['run_id'], 'command': r['command'], 'status': r['status'],
                 'created': format_date(r['created_at']), 'config': r['config_hash']}
                for r in result['runs']])
        return

    _print_table(command, result.get('table', []))
    for key, value in result.get('summary', {}).items():
        console.print(f'{key}: {value}')
    console.print(f'[green]run {result["run_id"]}[/green] -> {result["run_dir"]}')


def _add_mcmc_flags(parser):
    parser.add_argument('--walkers', type=int, help='ensemble walkers')
    parser.add_argument('--steps', type=int, help='sampler steps per walker')
    parser.add_argument('--burn', type=int, help='burn-in steps discarded')
    parser.add_argument('--thin', type=int, help='keep every k-th step')


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON configuration file (or a manifest.json to re-run)')
    common.add_argument('--recipe', choices=sorted(recipes), help='named experiment preset')
    common.add_argument('--seed', type=int, help='master random seed')
    common.add_argument('--out', help='output root directory (default: runs)')
    common.add_argument('--threads', type=int, help='parallel jobs for windows, methods and paths')
    common.add_argument('--verbose', '-v', action='store_true', help='debug logging')

    parser = argparse.ArgumentParser(
        prog='corrdyn', description='Mean market correlation dynamics: GLE fitting, forecasting and resilience')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('preprocess', parents=[common], help='price CSV -> mean correlation series')
    p.add_argument('--prices', help='price CSV (date column plus one column per asset)')
    p.add_argument('--n', type=int, help='local normalisation window')
    p.add_argument('--tau', type=int, help='correlation window length')
    p.add_argument('--shift', type=int, help='stride between retained windows')
    p.add_argument('--window-mode', dest='window_mode', choices=WINDOW_MODES)
    p.add_argument('--max-missing-fraction', dest='max_missing_fraction', type=float)

    p = sub.add_parser('fit-gle', parents=[common], help='Bayesian fit of the binned GLE')
    p.add_argument('--series', help='series CSV (c_bar or x column)')
    p.add_argument('--n-bins', dest='n_bins', type=int)
    p.add_argument('--bin-mode', dest='bin_mode', choices=BIN_MODES)
    p.add_argument('--k-max', dest='k_max', type=int, help='memory kernel length (0 = Langevin)')
    p.add_argument('--plateau-tol', dest='plateau_tol', type=float)
    p.add_argument('--step-h', dest='step_h', type=float)
    _add_mcmc_flags(p)

    p = sub.add_parser('diagnose', parents=[common], help='ACF and distribution checks of a fitted model')
    p.add_argument('--series')
    p.add_argument('--model', help='gle_model.json from fit-gle')
    p.add_argument('--max-lag', dest='max_lag', type=int)
    p.add_argument('--sim-steps', dest='sim_steps', type=int)
    p.add_argument('--grid-points', dest='grid_points', type=int, help='KDE grid size')

    p = sub.add_parser('predict', parents=[common], help='one-step forecast benchmark')
    p.add_argument('--series')
    p.add_argument('--alpha', type=float, action='append', help='training fraction (repeatable)')
    p.add_argument('--methods', help='comma list, e.g. naive,le,gle3')
    p.add_argument('--estimate', choices=('map', 'mean'))
    p.add_argument('--n-bins', dest='n_bins', type=int)
    p.add_argument('--bin-mode', dest='bin_mode', choices=BIN_MODES)
    p.add_argument('--step-h', dest='step_h', type=float)
    _add_mcmc_flags(p)

    p = sub.add_parser('resilience', parents=[common], help='rolling-window drift slope and noise level')
    p.add_argument('--series')
    p.add_argument('--model-tag', dest='model_tag', choices=MODEL_TAGS)
    p.add_argument('--window-size', dest='window_size', type=int)
    p.add_argument('--window-shift', dest='window_shift', type=int)
    p.add_argument('--gamma', type=float, help='time-scale separation factor')
    p.add_argument('--priors', choices=sorted(PRIOR_PRESETS))
    p.add_argument('--detrend-width', dest='detrend_width', type=float)
    p.add_argument('--step-h', dest='step_h', type=float)
    _add_mcmc_flags(p)

    p = sub.add_parser('simulate', parents=[common], help='Euler-Maruyama simulation')
    p.add_argument('kind_arg', nargs='?', choices=SIMULATION_KINDS, metavar='KIND', help='same as --kind')
    p.add_argument('--kind', choices=SIMULATION_KINDS)
    p.add_argument('--model', help='gle_model.json for --kind gle')
    p.add_argument('--n-steps', dest='n_steps', type=int)
    p.add_argument('--n-paths', dest='n_paths', type=int)
    p.add_argument('--step-h', dest='step_h', type=float)

    p = sub.add_parser('runs', help='list registered runs')
    p.add_argument('--out', help='output root directory (default: runs)')
    p.add_argument('--command', dest='filter_command', choices=sorted(COMMAND_HANDLERS))
    p.add_argument('--limit', type=int, default=50)
    p.add_argument('--stats', action='store_true', help='run counts by status and command')
    p.add_argument('--config-hash', dest='config_hash', help='runs sharing one configuration hash')
    p.add_argument('--export', help='write every run with its artifacts to a JSON file')
    p.add_argument('run_id', nargs='?', help='show one run with its artifacts')
    p.add_argument('--verbose', '-v', action='store_true')

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(logging.DEBUG if args.verbose else logging.INFO)

    if args.command == 'runs':
        result = cmd_runs(args)
    else:
        result = run_command(args.command, args)
    report(args.command, result)
    return result['exit_code']


if __name__ == '__main__':
    sys.exit(main())
