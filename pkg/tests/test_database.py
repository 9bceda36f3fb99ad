import pytest

from database.operations import RunOperations


@pytest.fixture
def registry(tmp_path):
    return RunOperations(tmp_path / 'registry' / 'runs.db')


def test_register_and_finish_run(registry, tmp_path):
    result = registry.register_run('20240101-000000-abc', 'fit-gle', 'abc', 7, tmp_path)
    assert result['success']

    finished = registry.finish_run('20240101-000000-abc', 'success',
                                   artifacts=[('model', tmp_path / 'gle_model.json', 'f' * 64),
                                              ('manifest', tmp_path / 'manifest.json', None)])
    assert finished == {'success': True, 'run_id': '20240101-000000-abc', 'status': 'success'}

    run = registry.get_run('20240101-000000-abc')['run']
    assert run['command'] == 'fit-gle'
    assert run['seed'] == 7
    assert run['status'] == 'success'
    assert run['finished_at'] is not None
    assert [a['kind'] for a in run['artifacts']] == ['model', 'manifest']
    assert run['artifacts'][0]['sha256'] == 'f' * 64


def test_duplicate_and_missing_runs(registry, tmp_path):
    registry.register_run('r1', 'simulate', 'h1', 0, tmp_path)
    assert not registry.register_run('r1', 'simulate', 'h1', 0, tmp_path)['success']
    assert not registry.register_run('', 'simulate', 'h1', 0, tmp_path)['success']
    assert not registry.finish_run('r2')['success']
    assert not registry.get_run('r2')['success']


def test_unknown_status_is_rejected(registry, tmp_path):
    registry.register_run('r1', 'simulate', 'h1', 0, tmp_path)
    result = registry.finish_run('r1', 'crashed')
    assert not result['success']
    assert registry.get_run('r1')['run']['status'] == 'running'


def test_failed_run_keeps_its_error(registry, tmp_path):
    registry.register_run('r1', 'predict', 'h1', 0, tmp_path)
    registry.finish_run('r1', 'failed', error='InputDataError: series contains non-finite values')
    run = registry.get_run('r1')['run']
    assert run['status'] == 'failed'
    assert run['error'].startswith('InputDataError')


def test_listing_and_statistics(registry, tmp_path):
    for i, command in enumerate(['simulate', 'fit-gle', 'simulate']):
        registry.register_run(f'r{i}', command, 'same' if command == 'simulate' else 'other', i, tmp_path)
    registry.finish_run('r0', 'success')

    listing = registry.list_runs()
    assert listing['count'] == 3
    assert [r['run_id'] for r in listing['runs']] == ['r2', 'r1', 'r0']
    assert registry.list_runs(command='simulate', limit=1)['runs'][0]['run_id'] == 'r2'
    assert registry.find_by_config_hash('same')['count'] == 2

    stats = registry.get_registry_statistics()['statistics']
    assert stats['total_runs'] == 3
    assert stats['by_status'] == {'running': 2, 'success': 1}
    assert stats['by_command'] == {'fit-gle': 1, 'simulate': 2}


def test_export_registry(registry, tmp_path):
    registry.register_run('r1', 'diagnose', 'h1', 0, tmp_path)
    registry.finish_run('r1', 'success', artifacts=[('acf', tmp_path / 'acf.csv', None)])

    exported = registry.export_registry()
    assert exported['success']
    runs = exported['data']['runs']
    assert runs[0]['run_id'] == 'r1'
    assert runs[0]['artifacts'][0]['path'] == str(tmp_path / 'acf.csv')
