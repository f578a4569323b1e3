"""CSV ingestion/emission, atomic writes and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .series import TimeSeries


class InputError(ValueError):
    """Bad or unreadable user input (maps to exit code 2)."""


def content_digest(data: bytes) -> str:
    """64-bit BLAKE2b content hash as 16 hex digits."""
    return hashlib.blake2b(data, digest_size=8).hexdigest()


def file_digest(path: str | Path) -> str:
    return content_digest(Path(path).read_bytes())


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if np.isnan(v):
            return "nan"
        return repr(v)
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _read_rows(path: str | Path) -> list[list[str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{path} is empty")
    return rows


def _is_numeric_row(row: Sequence[str]) -> bool:
    try:
        [float(c) for c in row]
    except ValueError:
        return False
    return True


def read_series(path: str | Path, timestamp_column: bool = False) -> TimeSeries:
    """Comma-separated numeric columns with an optional header row.

    With ``timestamp_column`` the first column is dropped before parsing.
    """
    rows = _read_rows(path)
    if timestamp_column:
        rows = [r[1:] for r in rows]
    header = None
    if not _is_numeric_row(rows[0]):
        header, rows = [c.strip() for c in rows[0]], rows[1:]
    if not rows:
        raise InputError(f"{path} has no data rows")
    try:
        values = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric value ({exc})") from None
    if values.ndim != 2 or values.shape[1] == 0:
        raise InputError(f"{path}: ragged or empty rows")
    try:
        return TimeSeries(values, tuple(header) if header else ())
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def read_column(path: str | Path, name: str | None = None) -> np.ndarray:
    """One numeric column (by header name, else the first) of a CSV file."""
    rows = _read_rows(path)
    col = 0
    if not _is_numeric_row(rows[0][:1]) or (name and name in rows[0]):
        header, rows = rows[0], rows[1:]
        if name is not None:
            if name not in header:
                raise InputError(f"{path}: no column {name!r}")
            col = header.index(name)
    try:
        return np.array([float(r[col]) for r in rows], dtype=float)
    except (ValueError, IndexError) as exc:
        raise InputError(f"{path}: bad value in column {col} ({exc})") from None


def read_labels(path: str | Path) -> np.ndarray:
    y = read_column(path)
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise InputError(f"{path}: labels must be 0 or 1")
    return y.astype(int)


def write_manifest(out_path: str | Path, record: dict) -> Path:
    """Sidecar ``<out>.manifest.json`` next to an output file."""
    path = Path(str(out_path) + ".manifest.json")
    atomic_write_bytes(path, (json.dumps(record, indent=2, sort_keys=True) + "\n").encode())
    return path
