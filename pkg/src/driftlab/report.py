"""Convergence reports: rows of (index, pre-limit value, limit, gap) plus
auxiliary diagnostics, with byte-stable CSV round-tripping.

Floats are rendered with 17 significant digits so that CSV bodies are
bit-reproducible and round-trip float64 exactly.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

__all__ = ["ReportRow", "ConvergenceReport", "format_float", "compare_reports"]


def format_float(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


@dataclass(frozen=True)
class ReportRow:
    index: float
    prelimit: float
    limit: float
    gap: float
    aux: dict = field(default_factory=dict)


@dataclass
class ConvergenceReport:
    """Ordered experiment rows with the standard (index, value, limit, gap) core.

    ``meta`` carries run facts for the manifest (grids, scheme, stability
    numbers); it never enters the CSV body.
    """

    kind: str
    rows: list
    columns: tuple = ("index", "prelimit", "limit", "gap")
    meta: dict = field(default_factory=dict)

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: r.index)

    def to_csv(self, header_names: Optional[tuple] = None) -> str:
        names = header_names or self.columns
        aux_keys = sorted({k for r in self.rows for k in r.aux})
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(names) + aux_keys)
        for row in self.sorted_rows():
            core = [row.index, row.prelimit, row.limit, row.gap]
            extra = [row.aux.get(k, "") for k in aux_keys]
            writer.writerow([format_float(v) if v != "" else "" for v in core + extra])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, kind: str = "") -> "ConvergenceReport":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        rows = []
        for rec in reader:
            if not rec:
                continue
            vals = [float(v) if v != "" else math.nan for v in rec]
            aux = dict(zip(header[4:], vals[4:]))
            # the gap column is recomputed on load
            rows.append(ReportRow(vals[0], vals[1], vals[2], abs(vals[1] - vals[2]), aux))
        return cls(kind=kind, rows=rows, columns=tuple(header[:4]))


def compare_reports(a: ConvergenceReport, b: ConvergenceReport, tolerance: float):
    """Row-aligned differences between two reports of the same kind.

    Returns (max_abs_difference, per-row differences); raises on mismatched
    shapes or kinds.
    """
    if a.kind != b.kind and a.kind and b.kind:
        raise ValueError(f"mismatched report kinds {a.kind!r} vs {b.kind!r}")
    ra, rb = a.sorted_rows(), b.sorted_rows()
    if len(ra) != len(rb):
        raise ValueError("mismatched row counts")
    diffs = []
    for x, y in zip(ra, rb):
        if x.index != y.index:
            raise ValueError(f"mismatched row indices {x.index} vs {y.index}")
        diffs.append(abs(x.prelimit - y.prelimit))
    worst = max(diffs) if diffs else 0.0
    return worst, diffs


def compare_csv_texts(text_a: str, text_b: str):
    """Cell-wise comparison of two report CSV bodies.

    Numeric cells contribute their absolute difference; non-numeric cells
    must match exactly.  Mismatched headers or shapes raise.
    """

    def parse(text):
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        return rows[0], rows[1:]

    header_a, rows_a = parse(text_a)
    header_b, rows_b = parse(text_b)
    if header_a != header_b:
        raise ValueError("mismatched headers")
    if len(rows_a) != len(rows_b):
        raise ValueError("mismatched row counts")
    worst = 0.0
    count = 0
    for ra, rb in zip(rows_a, rows_b):
        if len(ra) != len(rb):
            raise ValueError("mismatched row widths")
        count += 1
        for va, vb in zip(ra, rb):
            try:
                fa, fb = float(va), float(vb)
            except ValueError:
                if va != vb:
                    raise ValueError(f"mismatched labels {va!r} vs {vb!r}")
                continue
            if math.isnan(fa) and math.isnan(fb):
                continue
            worst = max(worst, abs(fa - fb))
    return worst, count
