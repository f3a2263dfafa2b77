"""Long-format CSV panels: ``unit,time,y,x1,...,xd``.

Units and periods are re-indexed to ``0..N-1`` and ``0..T-1`` in sorted token
order. Tokens sort numerically when every token of that column parses as a
number, and as strings otherwise. Floats are written with ``repr`` so a
write/read round trip is exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PanelFormatError
from .model import PanelData


@dataclass
class LoadedPanel:
    panel: PanelData
    units: list[str]
    periods: list[str]


def _sort_tokens(tokens) -> list[str]:
    tokens = list(tokens)
    try:
        return sorted(tokens, key=lambda s: (float(s), s))
    except ValueError:
        return sorted(tokens)


def _number(text: str, line: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise PanelFormatError(f"line {line}: column {column!r} is not a number: {text!r}") from None
    if not np.isfinite(v):
        raise PanelFormatError(f"line {line}: column {column!r} is not finite: {text!r}")
    return v


def read_panel_csv(path) -> LoadedPanel:
    """Read a balanced long-format panel.

    Raises :class:`PanelFormatError` for a bad header, a non-numeric value,
    a duplicated ``(unit, time)`` pair or a missing cell (named in the message).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise PanelFormatError(f"{path}: empty file") from None
        if len(header) < 3 or header[:3] != ["unit", "time", "y"]:
            raise PanelFormatError(f"{path}: header must start with unit,time,y (got {','.join(header)})")
        names = tuple(header[3:])
        if len(set(header)) != len(header):
            raise PanelFormatError(f"{path}: duplicated column names in header")
        cells: dict[tuple[str, str], list[float]] = {}
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise PanelFormatError(f"line {line}: expected {len(header)} fields, found {len(row)}")
            unit, time = row[0].strip(), row[1].strip()
            if not unit or not time:
                raise PanelFormatError(f"line {line}: empty unit or time token")
            key = (unit, time)
            if key in cells:
                raise PanelFormatError(f"line {line}: duplicate cell (unit={unit}, time={time})")
            cells[key] = [_number(c.strip(), line, h) for c, h in zip(row[2:], header[2:])]
    if not cells:
        raise PanelFormatError(f"{path}: no data rows")

    units = _sort_tokens({u for u, _ in cells})
    periods = _sort_tokens({t for _, t in cells})
    n, t, d = len(units), len(periods), len(names)
    values = np.empty((d + 1, n, t))
    for i, u in enumerate(units):
        for s, p in enumerate(periods):
            row = cells.get((u, p))
            if row is None:
                raise PanelFormatError(f"missing cell (unit={u}, time={p}); the panel must be balanced")
            values[:, i, s] = row
    return LoadedPanel(PanelData(values[0], values[1:], names), units, periods)


def write_panel_csv(path, panel: PanelData, units=None, periods=None) -> None:
    n, t = panel.shape
    units = list(units) if units is not None else [str(i) for i in range(n)]
    periods = list(periods) if periods is not None else [str(s) for s in range(t)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit", "time", "y", *panel.names])
        for i in range(n):
            for s in range(t):
                w.writerow([units[i], periods[s], repr(float(panel.y[i, s])), *(repr(float(v)) for v in panel.x[:, i, s])])


def write_matrix_csv(path, m: np.ndarray, row_labels, col_labels, corner: str = "") -> None:
    """Matrix with labelled rows and columns."""
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([corner, *col_labels])
        for label, row in zip(row_labels, np.asarray(m)):
            w.writerow([label, *(repr(float(v)) for v in row)])
