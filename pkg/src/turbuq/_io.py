"""Atomic file output and full-precision CSV helpers."""

from __future__ import annotations

import contextlib
import csv
import os
import tempfile
from pathlib import Path


def _current_umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


# mkstemp creates 0600 files; published outputs should follow the umask
_FILE_MODE = 0o666 & ~_current_umask()


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def fmt(x) -> str:
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    return "%.17g" % x


@contextlib.contextmanager
def atomic_open(path, mode: str = "w"):
    """Write to a temporary sibling file and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.chmod(tmp, _FILE_MODE)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    with atomic_open(path, "w") as fh:
        fh.write(text)


def write_csv(path, header, rows) -> None:
    with atomic_open(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def read_csv(path, required=None):
    """Return ``(header, rows)`` with rows as lists of raw strings."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        rows = list(reader)
    while rows and not rows[-1]:
        rows.pop()
    for lineno, r in enumerate(rows, start=2):
        if not r:
            raise DataError(f"{path}: line {lineno} is empty")
    if required is not None:
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s): {', '.join(missing)}")
    return header, rows


def parse_columns(path, header, rows, columns, int_columns=()):
    """Parse named columns to floats (or ints) with row/column diagnostics.

    Row numbers in messages count the header as line 1.
    """
    pos = {c: header.index(c) for c in columns}
    out = {c: [] for c in columns}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
        for c in columns:
            cell = row[pos[c]].strip()
            try:
                out[c].append(int(cell) if c in int_columns else float(cell))
            except ValueError:
                raise DataError(
                    f"{path}: line {lineno}, column {c!r}: non-numeric value {cell!r}"
                ) from None
    return out


def check_unique_ids(path, ids) -> None:
    seen: dict[int, int] = {}
    for lineno, pid in enumerate(ids, start=2):
        if pid in seen:
            raise DataError(
                f"{path}: duplicate point_id {pid} on lines {seen[pid]} and {lineno}"
            )
        seen[pid] = lineno
