"""Deterministic output writers shared by the protocol runners.

Floats are written with repr (shortest round-trip form) and JSON keys are
sorted, so a fixed scenario and seed produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

__all__ = [
    "write_csv",
    "write_json",
    "matrix_payload",
    "matrix_from_payload",
    "read_csv_rows",
    "sha256_file",
]


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])
    return path


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    return obj


def write_json(path, payload) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(_jsonify(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def matrix_payload(m: np.ndarray) -> dict:
    """Row-major (re, im) pair serialization of a complex matrix."""
    m = np.asarray(m, dtype=complex)
    return {
        "shape": list(m.shape),
        "data": [[float(x.real), float(x.imag)] for x in m.reshape(-1)],
    }


def matrix_from_payload(payload: dict) -> np.ndarray:
    """Inverse of `matrix_payload`."""
    flat = np.array([re + 1.0j * im for re, im in payload["data"]])
    return flat.reshape(tuple(payload["shape"]))


def read_csv_rows(path) -> tuple[list[str], list[list[str]]]:
    """Header and raw string rows of a CSV file written by `write_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = list(next(reader))
        return header, [list(row) for row in reader]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
