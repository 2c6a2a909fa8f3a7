"""Deterministic JSON reports and CSV time series."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

__all__ = ["checked", "info", "jsonable", "write_report", "read_report", "strip_timestamp",
           "write_csv", "TIMESTAMP_KEY"]

TIMESTAMP_KEY = "generated_at"


def checked(value, tol, passed) -> dict:
    """A number together with the tolerance it was judged against."""
    return {"value": jsonable(value), "tol": jsonable(tol), "pass": bool(passed)}


def info(value) -> dict:
    """A number reported without a criterion (``tol`` and ``pass`` are null)."""
    return {"value": jsonable(value), "tol": None, "pass": None}


def _float(x: float):
    if math.isfinite(x):
        return x
    return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")


def jsonable(obj):
    """Convert numpy scalars and arrays, tuples and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _float(float(obj))
    return obj


def write_report(path, data: dict, timestamp: bool = True) -> None:
    """Write ``data`` as sorted-key JSON; the timestamp is the only varying field."""
    payload = jsonable(data)
    if timestamp:
        payload[TIMESTAMP_KEY] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())


def strip_timestamp(data: dict) -> dict:
    return {k: v for k, v in data.items() if k != TIMESTAMP_KEY}


def write_csv(path, rows: Iterable[dict], columns: Optional[list] = None) -> None:
    """One row per record; list values are joined with ``;``."""
    rows = list(rows)
    if columns is None:
        columns = sorted({k for r in rows for k in r})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            out = []
            for c in columns:
                v = jsonable(r.get(c, ""))
                if isinstance(v, list):
                    v = ";".join(repr(x) if isinstance(x, float) else str(x) for x in v)
                elif isinstance(v, float):
                    v = repr(v)
                out.append(v)
            w.writerow(out)
