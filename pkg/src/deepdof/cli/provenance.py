"""Reproducible seeds and provenance-stamped output files."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .. import __version__

# stream identifiers for derived seeds
TEACHER, X_FIT, X_EVAL, NODES, DATA, TRAIN = range(6)


def task_seed(master: int, *key: int) -> int:
    """Seed for the task addressed by ``key``, independent of execution order."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def provenance(command: str, config, seed) -> dict:
    """Header identifying the producing command, configuration, seed and package version."""
    return {"command": command, "config_hash": config_hash(config), "seed": seed, "version": __version__}


def write_json(path, payload: dict, prov: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"provenance": prov, **payload}, indent=2, default=_jsonable))
    return path


def write_csv(path, header, rows, prov: dict) -> Path:
    """CSV whose first line is ``# provenance: {...}``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write("# provenance: " + json.dumps(prov, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path) -> list:
    """Rows of a provenance-stamped CSV as dicts (comment lines skipped)."""
    with Path(path).open() as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def _cell(v):
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(str(_cell(x)) for x in v)
    return v


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")
