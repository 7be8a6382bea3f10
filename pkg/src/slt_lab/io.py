"""Small file helpers: atomic writes and CSV tables with a provenance header."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile


def atomic_write_text(path, text: str):
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    import numpy as np

    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def format_csv(rows: list[dict], columns: list[str], provenance: dict | None = None) -> str:
    """Render rows as CSV. ``provenance`` goes in a leading ``#`` comment line."""
    buf = io.StringIO()
    if provenance is not None:
        buf.write("# " + json.dumps(provenance, sort_keys=True, default=_jsonable) + "\n")
    writer = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k, "")) for k in columns})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, rows, columns, provenance=None):
    atomic_write_text(path, format_csv(rows, columns, provenance))


def read_csv(path):
    """Read a CSV written by :func:`write_csv`; returns ``(rows, provenance)``."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    provenance = None
    if lines and lines[0].startswith("# "):
        provenance = json.loads(lines[0][2:])
        lines = lines[1:]
    rows = list(csv.DictReader(lines))
    return rows, provenance
