"""CSV and SVG input/output for the command-line front end.

The CSV dialect is plain comma separation with an optional header row
and an optional leading row-name column, both auto-detected by
parseability.  Empty cells and the token ``NA`` (any capitalization)
denote missing entries.  All numeric output uses 17 significant digits,
which round-trips IEEE doubles exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "InputError",
    "MatrixFile",
    "read_matrix_csv",
    "format_value",
    "matrix_csv_text",
    "write_matrix_csv",
    "write_vector_csv",
    "write_table_csv",
    "write_json",
    "heatmap_svg",
]


class InputError(ValueError):
    """User-facing problem with an input file or option."""


def format_value(x) -> str:
    return format(float(x), ".17g")


def _parse_cell(text: str) -> float:
    """Float value of one cell, NaN when the cell marks a missing entry.

    Raises ValueError for anything that is neither numeric nor missing.
    """
    token = text.strip()
    if token == "" or token.upper() == "NA":
        return np.nan
    return float(token)  # may raise ValueError


def _cell_ok(text: str) -> bool:
    try:
        _parse_cell(text)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class MatrixFile:
    """Parsed matrix CSV: values with NaN at missing entries, the
    observation mask, and any detected header / row names."""

    values: np.ndarray
    mask: np.ndarray
    header: list | None
    row_names: list | None

    @property
    def complete(self) -> bool:
        return bool(self.mask.all())

    def column_name(self, j: int) -> str:
        if self.header is not None:
            return str(self.header[j])
        return str(j)


def read_matrix_csv(path) -> MatrixFile:
    """Read a numeric matrix, auto-detecting header and row names.

    A leading column counts as row names when any of its entries below
    the first row fails to parse as a number; the first row counts as a
    header when any of its data cells fails to parse.
    """
    try:
        with open(path, newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    if not rows:
        raise InputError(f"{path} contains no data")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise InputError(
                f"{path}: line {i + 1} has {len(row)} fields, expected {width}")

    body = rows[1:] if len(rows) > 1 else []
    named_rows = width > 1 and any(not _cell_ok(r[0]) for r in body)
    first_data_col = 1 if named_rows else 0
    has_header = any(not _cell_ok(c) for c in rows[0][first_data_col:])
    first_data_row = 1 if has_header else 0
    header = rows[0][first_data_col:] if has_header else None
    row_names = ([r[0] for r in rows[first_data_row:]] if named_rows
                 else None)
    data_rows = rows[first_data_row:]
    if not data_rows or width == first_data_col:
        raise InputError(f"{path} contains no numeric data")
    values = np.empty((len(data_rows), width - first_data_col))
    for i, row in enumerate(data_rows):
        for j, cell in enumerate(row[first_data_col:]):
            try:
                values[i, j] = _parse_cell(cell)
            except ValueError:
                raise InputError(
                    f"{path}: cannot parse value {cell.strip()!r} at line "
                    f"{i + 1 + first_data_row}, column "
                    f"{j + 1 + first_data_col}") from None
    mask = np.isfinite(values)
    return MatrixFile(values=values, mask=mask, header=header,
                      row_names=row_names)


# ----------------------------------------------------------------------
# writers


def matrix_csv_text(M) -> str:
    M = np.asarray(M, dtype=float)
    lines = [",".join(format_value(x) for x in row) for row in M]
    return "\n".join(lines) + "\n"


def write_matrix_csv(path, M) -> None:
    with open(path, "w") as fh:
        fh.write(matrix_csv_text(M))


def write_vector_csv(path, v, integer: bool = False) -> None:
    v = np.asarray(v)
    with open(path, "w") as fh:
        for x in v:
            fh.write(f"{int(x)}\n" if integer else format_value(x) + "\n")


def write_table_csv(path, header, rows) -> None:
    """Small report table; floats at full precision, None as empty."""
    def cell(x):
        if x is None:
            return ""
        if isinstance(x, bool):
            return str(int(x))
        if isinstance(x, float):
            return format_value(x)
        return str(x)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([cell(x) for x in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ----------------------------------------------------------------------
# heatmap


_COLOR_LOW = (33, 102, 172)
_COLOR_HIGH = (178, 24, 43)
_COLOR_MID = (255, 255, 255)


def _cell_color(value: float, vmax: float) -> str:
    t = 0.0 if vmax == 0 else max(-1.0, min(1.0, value / vmax))
    target = _COLOR_HIGH if t >= 0 else _COLOR_LOW
    a = abs(t)
    rgb = tuple(round(m + a * (c - m)) for m, c in zip(_COLOR_MID, target))
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def heatmap_svg(U, row_labels, col_labels, cell: int | None = None) -> str:
    """Block-sorted heatmap with cluster boundary lines, as SVG text.

    Rows and columns are ordered by their cluster labels; black lines
    mark the boundaries between clusters.  Colors diverge around zero.
    """
    U = np.asarray(U, dtype=float)
    row_labels = np.asarray(row_labels, dtype=int)
    col_labels = np.asarray(col_labels, dtype=int)
    n, p = U.shape
    if row_labels.shape != (n,) or col_labels.shape != (p,):
        raise ValueError("label lengths do not match the matrix shape")
    if cell is None:
        cell = max(2, min(12, 960 // max(n, p)))
    row_order = np.argsort(row_labels, kind="stable")
    col_order = np.argsort(col_labels, kind="stable")
    V = U[np.ix_(row_order, col_order)]
    vmax = float(np.max(np.abs(V))) if V.size else 0.0
    w, h = p * cell, n * cell
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
    ]
    for i in range(n):
        for j in range(p):
            parts.append(
                f'<rect x="{j * cell}" y="{i * cell}" width="{cell}" '
                f'height="{cell}" fill="{_cell_color(V[i, j], vmax)}"/>')
    sorted_rows = row_labels[row_order]
    sorted_cols = col_labels[col_order]
    for i in range(1, n):
        if sorted_rows[i] != sorted_rows[i - 1]:
            y = i * cell
            parts.append(f'<line x1="0" y1="{y}" x2="{w}" y2="{y}" '
                         f'stroke="#000000" stroke-width="2"/>')
    for j in range(1, p):
        if sorted_cols[j] != sorted_cols[j - 1]:
            x = j * cell
            parts.append(f'<line x1="{x}" y1="0" x2="{x}" y2="{h}" '
                         f'stroke="#000000" stroke-width="2"/>')
    parts.append(f'<rect x="0" y="0" width="{w}" height="{h}" fill="none" '
                 f'stroke="#000000" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
