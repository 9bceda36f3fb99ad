import sqlite3
from datetime import datetime

from .models import ArtifactRecord, DatabaseManager, RunRecord

RUN_STATUSES = ('running', 'success', 'failed')


class RunOperations:
    def __init__(self, db_path='runs/runs.db'):
        self.db_manager = DatabaseManager(db_path)
        self.run_record = RunRecord(self.db_manager)
        self.artifact_record = ArtifactRecord(self.db_manager)

    def register_run(self, run_id, command, config_hash, seed, out_dir):
        """Register a started run"""
        if not run_id or not command:
            return {'success': False, 'error': 'run_id and command are required'}

        if self.run_record.get_run(run_id):
            return {'success': False, 'error': f'run {run_id} already registered'}

        row_id = self.run_record.add_run(run_id, command, config_hash, seed, out_dir)
        if row_id:
            return {'success': True, 'id': row_id, 'run_id': run_id}
        return {'success': False, 'error': f'failed to register run {run_id}'}

    def finish_run(self, run_id, status='success', error=None, artifacts=None):
        """Close a run and record its artifacts as (kind, path, sha256) tuples"""
        if status not in RUN_STATUSES:
            return {'success': False, 'error': f'unknown status {status!r}'}

        try:
            if not self.run_record.finish_run(run_id, status, error):
                return {'success': False, 'error': f'unknown run {run_id}'}
            for kind, path, sha256 in artifacts or []:
                self.artifact_record.add_artifact(run_id, kind, path, sha256)
        except sqlite3.Error as e:
            return {'success': False, 'error': f'registry update failed: {e}'}

        return {'success': True, 'run_id': run_id, 'status': status}

    def get_run(self, run_id):
        run = self.run_record.get_run(run_id)
        if run:
            run['artifacts'] = self.artifact_record.get_artifacts(run_id)
            return {'success': True, 'run': run}
        return {'success': False, 'error': f'unknown run {run_id}'}

    def list_runs(self, command=None, limit=100):
        runs = self.run_record.get_all_runs(command=command, limit=limit)
        return {'success': True, 'runs': runs, 'count': len(runs)}

    def find_by_config_hash(self, config_hash):
        runs = self.run_record.find_by_config_hash(config_hash)
        return {'success': True, 'runs': runs, 'count': len(runs)}

    def get_registry_statistics(self):
        return {'success': True, 'statistics': self.run_record.get_statistics()}

    def export_registry(self):
        """Export runs with their artifacts as a JSON-ready dictionary"""
        try:
            runs = self.run_record.get_all_runs(limit=100000)
            for run in runs:
                run['artifacts'] = self.artifact_record.get_artifacts(run['run_id'])
            return {'success': True, 'data': {'runs': runs, 'export_timestamp': str(datetime.now())}}
        except sqlite3.Error as e:
            return {'success': False, 'error': f'registry export failed: {e}'}
