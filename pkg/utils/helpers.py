import hashlib
import json
import math
import platform
from datetime import datetime
from importlib import metadata
from pathlib import Path

import numpy as np

TRACKED_PACKAGES = ['numpy', 'scipy', 'pandas', 'emcee', 'statsmodels', 'scikit-learn', 'joblib', 'rich']


def to_jsonable(value):
    """Convert numpy containers and scalars into plain JSON types"""
    if isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        # JSON has no NaN/inf
        return value if math.isfinite(value) else None
    if isinstance(value, Path):
        return str(value)
    return value


def export_to_json(data, filename=None):
    """Export data to JSON file"""
    if filename is None:
        timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
        filename = f'export_{timestamp}.json'

    try:
        with open(filename, 'w', encoding='utf-8') as f:
            json.dump(to_jsonable(data), f, ensure_ascii=False, indent=2, sort_keys=True)
        return {'success': True, 'filename': str(filename)}
    except (OSError, TypeError, ValueError) as e:
        return {'success': False, 'error': str(e)}


def import_from_json(filename):
    """Import data from JSON file"""
    try:
        with open(filename, 'r', encoding='utf-8') as f:
            data = json.load(f)
        return {'success': True, 'data': data}
    except (OSError, ValueError) as e:
        return {'success': False, 'error': str(e)}


def format_date(date_value):
    """Format a datetime or ISO string for display"""
    try:
        if isinstance(date_value, str):
            date_obj = datetime.fromisoformat(date_value.replace('Z', '+00:00'))
        else:
            date_obj = date_value

        return date_obj.strftime('%Y-%m-%d %H:%M')
    except (ValueError, AttributeError):
        return str(date_value)


def config_hash(config_dict):
    """Stable short hash of a configuration dictionary"""
    canonical = json.dumps(to_jsonable(config_dict), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:12]


def file_sha256(path):
    """SHA-256 of a file's bytes, or None when the file is absent"""
    path = Path(path)
    if not path.is_file():
        return None

    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def run_directory_name(hash_value, now=None):
    """Name of a run directory: timestamp followed by the config hash"""
    now = now or datetime.now()
    return f"{now.strftime('%Y%m%d-%H%M%S')}-{hash_value}"


def package_versions():
    """Versions of the numerical stack, recorded in every manifest"""
    versions = {'python': platform.python_version()}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def check_int(errors, field, value, minimum=None, maximum=None):
    """Append an error unless value is an integer inside [minimum, maximum]"""
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        errors.append(f'{field} must be an integer')
        return
    if minimum is not None and value < minimum:
        errors.append(f'{field} must be >= {minimum} (got {value})')
    if maximum is not None and value > maximum:
        errors.append(f'{field} must be <= {maximum} (got {value})')


def check_number(errors, field, value, low=None, high=None, low_open=False, high_open=False):
    """Append an error unless value is a finite number inside the given range"""
    if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
        errors.append(f'{field} must be a number')
        return
    if not math.isfinite(value):
        errors.append(f'{field} must be finite')
        return
    if low is not None and (value < low or (low_open and value == low)):
        errors.append(f"{field} must be {'>' if low_open else '>='} {low} (got {value})")
    if high is not None and (value > high or (high_open and value == high)):
        errors.append(f"{field} must be {'<' if high_open else '<='} {high} (got {value})")


def check_choice(errors, field, value, choices):
    """Append an error unless value is one of choices"""
    if value not in choices:
        errors.append(f"{field} must be one of {', '.join(map(str, choices))} (got {value!r})")
