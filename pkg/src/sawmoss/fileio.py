"""CSV and JSON file handling with atomic writes.

All outputs are plain text: CSV for arrays, JSON for structured reports.
Floats are written with ``repr`` round-trip precision so that repeated
runs with identical seeds produce byte-identical files.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .errors import InputError

__all__ = [
    "atomic_write_text",
    "write_csv",
    "read_csv",
    "write_json",
    "read_json",
]


def atomic_write_text(path: str, text: str) -> None:
    """Write text to ``path`` via a temporary file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _format_value(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path: str, columns: dict) -> None:
    """Write named columns of equal length as CSV."""
    names = list(columns.keys())
    arrays = [np.asarray(columns[name]) for name in names]
    length = arrays[0].size
    if any(a.size != length for a in arrays):
        raise InputError("CSV columns must have equal length")
    lines = [",".join(names)]
    for i in range(length):
        lines.append(",".join(_format_value(a[i]) for a in arrays))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path: str) -> dict:
    """Read a CSV written by :func:`write_csv` into float arrays by column."""
    try:
        with open(path) as handle:
            header = handle.readline().strip()
            if not header:
                raise InputError(f"empty CSV file: {path}")
            names = header.split(",")
            data = np.loadtxt(handle, delimiter=",", ndmin=2)
    except OSError as exc:
        raise InputError(f"cannot read CSV {path}: {exc}") from exc
    except ValueError as exc:
        raise InputError(f"malformed CSV {path}: {exc}") from exc
    if data.size == 0:
        raise InputError(f"CSV {path} has no data rows")
    if data.shape[1] != len(names):
        raise InputError(f"CSV {path}: {data.shape[1]} columns, header names {len(names)}")
    return {name: data[:, i].copy() for i, name in enumerate(names)}


def write_json(path: str, document: dict) -> None:
    """Write a JSON document with stable key order."""
    atomic_write_text(path, json.dumps(document, indent=2, sort_keys=True) + "\n")


def read_json(path: str) -> dict:
    try:
        with open(path) as handle:
            return json.load(handle)
    except OSError as exc:
        raise InputError(f"cannot read JSON {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON {path}: {exc}") from exc
