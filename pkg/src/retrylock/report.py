"""Shared CSV schema for model, sim and bench output."""

from __future__ import annotations

import csv
import io
import math
from typing import Iterable, Mapping, TextIO

COLUMNS = ("scenario", "scheme", "spin_count", "threads_or_lambda", "rho", "k", "kappa",
           "gamma", "W", "W_o", "w_bar_o", "throughput", "cpu_s", "source")

NA = "NA"


def _cell(v) -> str:
    if v is None:
        return NA
    if isinstance(v, float):
        return NA if math.isnan(v) else repr(v)
    return str(v)


def normalize(row: Mapping) -> dict:
    """Every column present; missing or NaN values become ``NA``."""
    extra = set(row) - set(COLUMNS)
    if extra:
        raise KeyError(f"unknown CSV columns {sorted(extra)}")
    return {c: _cell(row.get(c)) for c in COLUMNS}


def write_csv(rows: Iterable[Mapping], out: TextIO, columns=COLUMNS) -> None:
    w = csv.DictWriter(out, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(normalize(r) if columns is COLUMNS else {c: _cell(r.get(c)) for c in columns})


def to_csv(rows: Iterable[Mapping], columns=COLUMNS) -> str:
    buf = io.StringIO()
    write_csv(rows, buf, columns)
    return buf.getvalue()


def format_table(rows: list[Mapping], columns: Iterable[str] | None = None) -> str:
    """Plain aligned text table."""
    if not rows:
        return ""
    cols = list(columns or rows[0].keys())

    def fmt(v):
        if isinstance(v, float):
            return NA if math.isnan(v) else f"{v:.6g}"
        return NA if v is None else str(v)

    cells = [[fmt(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"
