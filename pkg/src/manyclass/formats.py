"""Plain-text dataset, parameter and results-CSV formats.

Dataset file: a header line ``N D C``, then N lines of D space-separated
reals, then N lines holding one integer label each. Parameter file: a header
line ``C D`` followed by C lines of D reals. Reals are written with 17
significant digits so files round-trip exactly.
"""
from __future__ import annotations

import csv
import io

import numpy as np

from .model import ConfigurationError, Dataset

_REAL = "%.17g"


def _format_row(row) -> str:
    return " ".join(_REAL % v for v in row)


def write_dataset(path, data: Dataset) -> None:
    lines = [f"{data.N} {data.D} {data.C}"]
    lines += [_format_row(r) for r in data.inputs]
    lines += [str(int(c)) for c in data.labels]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_lines(path) -> list[str]:
    with open(path, encoding="ascii") as fh:
        return [ln for ln in (line.strip() for line in fh) if ln]


def _header(line: str, n: int, path) -> list[int]:
    try:
        vals = [int(v) for v in line.split()]
    except ValueError:
        vals = []
    if len(vals) != n:
        raise ConfigurationError(f"{path}: malformed header {line!r}")
    return vals


def _matrix(lines, rows: int, cols: int, path) -> np.ndarray:
    try:
        M = np.array([[float(v) for v in ln.split()] for ln in lines], dtype=np.float64)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    if M.shape != (rows, cols):
        raise ConfigurationError(f"{path}: expected a {rows}x{cols} matrix")
    return M


def read_dataset(path) -> Dataset:
    lines = _read_lines(path)
    if not lines:
        raise ConfigurationError(f"{path}: empty dataset file")
    N, D, C = _header(lines[0], 3, path)
    if len(lines) != 1 + 2 * N:
        raise ConfigurationError(f"{path}: expected {2 * N} data lines, found {len(lines) - 1}")
    X = _matrix(lines[1:1 + N], N, D, path)
    try:
        labels = np.array([int(v) for v in lines[1 + N:]], dtype=np.int64)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return Dataset(X, labels, C)


def write_params(path, W) -> None:
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    lines = [f"{W.shape[0]} {W.shape[1]}"] + [_format_row(r) for r in W]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_params(path) -> np.ndarray:
    lines = _read_lines(path)
    if not lines:
        raise ConfigurationError(f"{path}: empty parameter file")
    C, D = _header(lines[0], 2, path)
    return _matrix(lines[1:], C, D, path)


def _cell(v) -> str:
    # repr of a Python float is locale independent and round-trips
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def format_csv(rows, fields, metadata=()) -> str:
    """CSV text with ``# key=value`` metadata lines ahead of the header."""
    buf = io.StringIO()
    for key, value in metadata:
        text = _cell(value).replace("\n", " ")
        buf.write(f"# {key}={text}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_cell(r[f]) for f in fields])
    return buf.getvalue()


def write_csv(path, rows, fields, metadata=()) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_csv(rows, fields, metadata))


def read_csv(path):
    """Returns ``(metadata dict, header list, row dicts)``."""
    meta = {}
    body = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value
            elif line.strip():
                body.append(line)
    if not body:
        raise ConfigurationError(f"{path}: no CSV header")
    reader = csv.DictReader(body)
    rows = list(reader)
    return meta, list(reader.fieldnames or []), rows
