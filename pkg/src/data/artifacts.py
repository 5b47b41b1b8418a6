"""
Artifact persistence
CSV tables, JSON reports with stable key order, the run manifest and the append-only run log
"""

import json
import math
import os
from datetime import datetime

import numpy as np

FLOAT_DIGITS = 12


def clean(obj, digits=FLOAT_DIGITS):
    """JSON-ready copy: numpy scalars unwrapped, floats rounded to `digits` significant digits"""
    if isinstance(obj, dict):
        return {str(k): clean(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return [clean(v, digits) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if not math.isfinite(value):
            return None
        return float(f'{value:.{digits}g}')
    return obj


def write_json(path, payload):
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(clean(payload), fh, indent=2, sort_keys=True)
        fh.write('\n')
    return path


def read_json(path):
    with open(path, 'r', encoding='utf-8') as fh:
        return json.load(fh)


def write_csv(path, frame):
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    frame.to_csv(path, index=False, float_format=f'%.{FLOAT_DIGITS}g')
    return path


def append_run_log(out_dir, record):
    """Append one JSON line to <out_dir>/logs/runs.log; never raises"""
    try:
        log_dir = os.path.join(out_dir, 'logs')
        os.makedirs(log_dir, exist_ok=True)
        entry = {'timestamp': datetime.now().isoformat(), **record}
        with open(os.path.join(log_dir, 'runs.log'), 'a', encoding='utf-8') as fh:
            fh.write(json.dumps(clean(entry), sort_keys=True) + '\n')
    except Exception as e:
        print(f"⚠️ Could not write run log: {e}")


def write_manifest(out_dir, config, version, commands, wall_times, summary):
    """manifest.json: config hash, code version, seeds, wall-times and headline statistics"""
    payload = {
        'config_hash': config.config_hash,
        'version': version,
        'commands': list(commands),
        'seeds': {'sim': config.sim.seed},
        'wall_times': wall_times,
        'summary': summary,
        'config': dict(sorted(config.raw.items())),
    }
    return write_json(os.path.join(out_dir, 'manifest.json'), payload)


def surface_cache_path(out_dir, config_hash):
    return os.path.join(out_dir, 'cache', f'surface_{config_hash[:16]}.joblib')
