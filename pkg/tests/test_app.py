import json

import numpy as np
import pandas as pd
import pytest

from app import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, build_parser, collect_overrides, main
from database.operations import RunOperations
from utils.gle_fit import GleModel, save_gle_model


def _run_dirs(root):
    return sorted(p for p in root.iterdir() if p.is_dir())


def _manifest(run_dir):
    return json.loads((run_dir / 'manifest.json').read_text())


@pytest.fixture
def series_csv(tmp_path, ou_values):
    path = tmp_path / 'series.csv'
    pd.DataFrame({'t': np.arange(2000) * 0.1, 'x': ou_values[:2000]}).to_csv(path, index=False)
    return path


def test_simulate_writes_manifest_and_registry(tmp_path):
    out = tmp_path / 'runs'
    code = main(['simulate', 'langevin', '--n-steps', '200', '--step-h', '0.1', '--seed', '3', '--out', str(out)])
    assert code == EXIT_OK

    [run_dir] = _run_dirs(out)
    manifest = _manifest(run_dir)
    assert manifest['status'] == 'success'
    assert manifest['command'] == 'simulate'
    assert manifest['seed'] == 3
    assert manifest['config']['simulate']['kind'] == 'langevin'
    assert len(manifest['config_hash']) == 12
    assert run_dir.name.endswith(manifest['config_hash'])
    assert {o['path'] for o in manifest['outputs']} == {'trajectory.csv', 'trajectory.csv.json'}
    assert all(o['sha256'] for o in manifest['outputs'])
    assert 'numpy' in manifest['versions']

    frame = pd.read_csv(run_dir / 'trajectory.csv')
    assert len(frame) == 201
    assert (run_dir / 'run.log').is_file()

    run = RunOperations(out / 'runs.db').get_run(run_dir.name)['run']
    assert run['status'] == 'success'
    assert 'manifest' in [a['kind'] for a in run['artifacts']]


def test_manifest_rerun_reproduces_outputs(tmp_path):
    out = tmp_path / 'runs'
    assert main(['simulate', 'two-scale', '--n-steps', '300', '--step-h', '0.05', '--seed', '8',
                 '--out', str(out)]) == EXIT_OK
    [first] = _run_dirs(out)

    assert main(['simulate', '--config', str(first / 'manifest.json'), '--out', str(out)]) == EXIT_OK
    second = [d for d in _run_dirs(out) if d != first][0]

    assert _manifest(second)['config_hash'] == _manifest(first)['config_hash']
    assert (second / 'trajectory.csv').read_bytes() == (first / 'trajectory.csv').read_bytes()
    assert RunOperations(out / 'runs.db').find_by_config_hash(_manifest(first)['config_hash'])['count'] == 2


def test_several_paths(tmp_path):
    out = tmp_path / 'runs'
    assert main(['simulate', '--kind', 'langevin', '--n-steps', '50', '--n-paths', '3', '--out', str(out)]) == EXIT_OK
    [run_dir] = _run_dirs(out)
    assert sorted(p.name for p in run_dir.glob('trajectory_*.csv')) == [
        'trajectory_000.csv', 'trajectory_001.csv', 'trajectory_002.csv']


def test_invalid_config_exits_with_validation_code(tmp_path):
    out = tmp_path / 'runs'
    assert main(['simulate', 'langevin', '--n-steps', '0', '--out', str(out)]) == EXIT_VALIDATION
    assert not out.exists()


def test_unknown_config_key_exits_with_validation_code(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text(json.dumps({'simulate': {'steps': 10}}))
    assert main(['simulate', '--config', str(path), '--out', str(tmp_path / 'runs')]) == EXIT_VALIDATION


def test_missing_input_is_a_runtime_error(tmp_path):
    code = main(['preprocess', '--prices', str(tmp_path / 'missing.csv'), '--out', str(tmp_path / 'runs')])
    assert code == EXIT_RUNTIME
    code = main(['fit-gle', '--out', str(tmp_path / 'runs')])
    assert code == EXIT_RUNTIME


def test_failed_analysis_is_recorded(tmp_path):
    path = tmp_path / 'series.csv'
    pd.DataFrame({'x': np.full(50, 0.2)}).to_csv(path, index=False)
    out = tmp_path / 'runs'

    code = main(['fit-gle', '--series', str(path), '--n-bins', '2', '--k-max', '0', '--walkers', '8',
                 '--steps', '20', '--burn', '5', '--out', str(out)])

    assert code == EXIT_RUNTIME
    [run_dir] = _run_dirs(out)
    manifest = _manifest(run_dir)
    assert manifest['status'] == 'failed'
    assert manifest['error'].startswith('InputDataError')
    assert RunOperations(out / 'runs.db').get_run(run_dir.name)['run']['status'] == 'failed'


def test_preprocess_then_list_runs(tmp_path, market_prices, capsys):
    out = tmp_path / 'runs'
    code = main(['preprocess', '--prices', str(market_prices), '--tau', '5', '--shift', '5',
                 '--window-mode', 'trailing', '--out', str(out)])
    assert code == EXIT_OK

    [run_dir] = _run_dirs(out)
    frame = pd.read_csv(run_dir / 'correlation.csv')
    assert 'c_bar' in frame.columns
    assert len(frame) == 45
    assert _manifest(run_dir)['inputs'][0]['name'] == 'prices'

    assert main(['runs', '--out', str(out)]) == EXIT_OK
    assert main(['runs', '--out', str(out), run_dir.name]) == EXIT_OK
    assert main(['runs', '--out', str(out), 'no-such-run']) == EXIT_RUNTIME
    assert run_dir.name in capsys.readouterr().out


def test_runs_without_registry(tmp_path):
    assert main(['runs', '--out', str(tmp_path / 'empty')]) == EXIT_OK


def test_fit_gle_then_diagnose(tmp_path, series_csv):
    out = tmp_path / 'runs'
    code = main(['fit-gle', '--series', str(series_csv), '--n-bins', '2', '--k-max', '1', '--step-h', '0.1',
                 '--walkers', '10', '--steps', '60', '--burn', '10', '--thin', '1', '--seed', '1', '--out', str(out)])
    assert code == EXIT_OK

    [fit_dir] = _run_dirs(out)
    saved = json.loads((fit_dir / 'gle_model.json').read_text())
    assert saved['map_model']['k_max'] == 1
    assert len(saved['coefficients']) == 5
    for name in ('gle_mean_model.json', 'coefficients.csv', 'chains.bin', 'chains.json'):
        assert (fit_dir / name).is_file()

    code = main(['diagnose', '--series', str(series_csv), '--model', str(fit_dir / 'gle_model.json'),
                 '--max-lag', '5', '--sim-steps', '2000', '--out', str(out)])
    assert code == EXIT_OK
    diag_dir = [d for d in _run_dirs(out) if d != fit_dir][0]
    acf = pd.read_csv(diag_dir / 'acf.csv')
    assert list(acf.columns) == ['lag', 'data_acf', 'model_acf', 'abs_diff']
    assert len(acf) == 6
    assert (diag_dir / 'kde_increment_1_model.csv').is_file()


def test_diagnose_density_grid_size(tmp_path, series_csv):
    model = save_gle_model(GleModel(bin_edges=[-5.0, 0.0, 5.0], drift_per_bin=[1.0, -1.0],
                                    diffusion_per_bin=[0.25, 0.25], step_h=0.1), tmp_path / 'model.json')
    out = tmp_path / 'runs'
    code = main(['diagnose', '--series', str(series_csv), '--model', str(model), '--max-lag', '3',
                 '--sim-steps', '1000', '--grid-points', '64', '--out', str(out)])
    assert code == EXIT_OK
    [diag_dir] = _run_dirs(out)
    for name in ('values_data', 'values_model', 'increment_1_data', 'increment_2_model'):
        assert len(pd.read_csv(diag_dir / f'kde_{name}.csv')) == 64


def test_flag_overrides():
    parser = build_parser()
    args = parser.parse_args(['predict', '--alpha', '0.7', '--alpha', '0.75', '--methods', 'naive, le',
                              '--walkers', '20', '--step-h', '0.5'])
    overrides = collect_overrides('predict', args)
    assert overrides['forecast'] == {'alphas': [0.7, 0.75], 'methods': ['naive', 'le'], 'mcmc': {'walkers': 20}}
    assert overrides['gle'] == {'step_h': 0.5}

    args = parser.parse_args(['resilience', '--steps', '100', '--model-tag', 'markov'])
    overrides = collect_overrides('resilience', args)
    assert overrides['resilience'] == {'model_tag': 'markov', 'mcmc': {'steps': 100}}


def test_unknown_recipe_is_rejected_by_the_parser():
    with pytest.raises(SystemExit):
        build_parser().parse_args(['simulate', '--recipe', 'hourly'])


def test_runs_statistics_lookup_and_export(tmp_path, market_prices, capsys):
    out = tmp_path / 'runs'
    for tau in ('5', '5', '10'):
        assert main(['preprocess', '--prices', str(market_prices), '--tau', tau, '--shift', '5',
                     '--window-mode', 'trailing', '--out', str(out)]) == EXIT_OK
    run_dirs = _run_dirs(out)
    capsys.readouterr()

    assert main(['runs', '--out', str(out), '--stats']) == EXIT_OK
    assert 'total runs: 3' in capsys.readouterr().out

    hashes = [_manifest(d)['config_hash'] for d in run_dirs]
    shared = max(set(hashes), key=hashes.count)
    assert hashes.count(shared) == 2
    matching = RunOperations(out / 'runs.db').find_by_config_hash(shared)
    expected = [d.name for d, h in zip(run_dirs, hashes) if h == shared]
    assert sorted(run['run_id'] for run in matching['runs']) == expected
    assert main(['runs', '--out', str(out), '--config-hash', shared]) == EXIT_OK

    export = tmp_path / 'registry.json'
    assert main(['runs', '--out', str(out), '--export', str(export)]) == EXIT_OK
    exported = json.loads(export.read_text())
    assert sorted(run['run_id'] for run in exported['runs']) == [d.name for d in run_dirs]
    assert all(run['artifacts'] for run in exported['runs'])
