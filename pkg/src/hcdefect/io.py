"""CSV and JSON writers with lossless, deterministic number formatting."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    """17 significant digits, the shortest form that round-trips any double."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    return header, rows


def write_field(path, coords: np.ndarray, values: np.ndarray) -> Path:
    """Field dump as (x, y, value) rows."""
    coords = np.asarray(coords, dtype=float)
    values = np.real(np.asarray(values))
    return write_csv(path, ("x", "y", "value"),
                     ((c[0], c[1], v) for c, v in zip(coords, values)))


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (bool, np.bool_)):
        return bool(o)
    if isinstance(o, (int, np.integer)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        x = float(o)
        # JSON has no NaN/inf; keep them as strings rather than emit invalid JSON
        return x if math.isfinite(x) else fmt(x)
    return o


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path
