import os
import sqlite3
from datetime import datetime

RUN_COLUMNS = ('id', 'run_id', 'command', 'config_hash', 'seed', 'out_dir', 'status', 'created_at',
               'finished_at', 'error')
ARTIFACT_COLUMNS = ('id', 'run_id', 'kind', 'path', 'sha256')


class DatabaseManager:
    def __init__(self, db_path='runs/runs.db'):
        self.db_path = str(db_path)
        self.init_database()

    def init_database(self):
        """Initialize the registry and create tables if they don't exist"""
        directory = os.path.dirname(self.db_path)
        if directory:
            os.makedirs(directory, exist_ok=True)

        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id TEXT UNIQUE NOT NULL,
                command TEXT NOT NULL,
                config_hash TEXT NOT NULL,
                seed INTEGER,
                out_dir TEXT NOT NULL,
                status TEXT DEFAULT 'running',
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                finished_at TIMESTAMP,
                error TEXT
            )
        ''')

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS artifacts (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id TEXT NOT NULL,
                kind TEXT NOT NULL,
                path TEXT NOT NULL,
                sha256 TEXT,
                FOREIGN KEY (run_id) REFERENCES runs (run_id)
            )
        ''')

        conn.commit()
        conn.close()

    def get_connection(self):
        return sqlite3.connect(self.db_path)

    def execute_query(self, query, params=None):
        """Execute a query and return results"""
        conn = self.get_connection()
        cursor = conn.cursor()
        cursor.execute(query, params or ())
        results = cursor.fetchall()
        conn.commit()
        conn.close()
        return results

    def execute_insert(self, query, params):
        """Execute an insert query and return the last row id"""
        conn = self.get_connection()
        cursor = conn.cursor()
        cursor.execute(query, params)
        last_id = cursor.lastrowid
        conn.commit()
        conn.close()
        return last_id


class RunRecord:
    def __init__(self, db_manager):
        self.db = db_manager

    def add_run(self, run_id, command, config_hash, seed, out_dir):
        query = '''
            INSERT INTO runs (run_id, command, config_hash, seed, out_dir, status, created_at)
            VALUES (?, ?, ?, ?, ?, 'running', ?)
        '''
        params = (run_id, command, config_hash, seed, str(out_dir), datetime.now().isoformat(timespec='seconds'))
        try:
            return self.db.execute_insert(query, params)
        except sqlite3.IntegrityError:
            return None

    def finish_run(self, run_id, status, error=None):
        """Mark a run as finished; returns False if the run is unknown"""
        if self.get_run(run_id) is None:
            return False
        self.db.execute_query(
            'UPDATE runs SET status = ?, finished_at = ?, error = ? WHERE run_id = ?',
            (status, datetime.now().isoformat(timespec='seconds'), error, run_id))
        return True

    def get_run(self, run_id):
        results = self.db.execute_query('SELECT * FROM runs WHERE run_id = ?', (run_id,))
        if results:
            return dict(zip(RUN_COLUMNS, results[0]))
        return None

    def get_all_runs(self, command=None, limit=100):
        if command:
            results = self.db.execute_query(
                'SELECT * FROM runs WHERE command = ? ORDER BY id DESC LIMIT ?', (command, limit))
        else:
            results = self.db.execute_query('SELECT * FROM runs ORDER BY id DESC LIMIT ?', (limit,))
        return [dict(zip(RUN_COLUMNS, row)) for row in results]

    def find_by_config_hash(self, config_hash):
        results = self.db.execute_query(
            'SELECT * FROM runs WHERE config_hash = ? ORDER BY id DESC', (config_hash,))
        return [dict(zip(RUN_COLUMNS, row)) for row in results]

    def get_statistics(self):
        total = self.db.execute_query('SELECT COUNT(*) FROM runs')[0][0]
        by_status = self.db.execute_query('SELECT status, COUNT(*) FROM runs GROUP BY status')
        by_command = self.db.execute_query('SELECT command, COUNT(*) FROM runs GROUP BY command')
        return {
            'total_runs': total,
            'by_status': {row[0]: row[1] for row in by_status},
            'by_command': {row[0]: row[1] for row in by_command},
        }


class ArtifactRecord:
    def __init__(self, db_manager):
        self.db = db_manager

    def add_artifact(self, run_id, kind, path, sha256=None):
        query = 'INSERT INTO artifacts (run_id, kind, path, sha256) VALUES (?, ?, ?, ?)'
        return self.db.execute_insert(query, (run_id, kind, str(path), sha256))

    def get_artifacts(self, run_id):
        results = self.db.execute_query('SELECT * FROM artifacts WHERE run_id = ? ORDER BY id', (run_id,))
        return [dict(zip(ARTIFACT_COLUMNS, row)) for row in results]
