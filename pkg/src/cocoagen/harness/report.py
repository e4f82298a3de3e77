from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class ReportTable:
    header: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.header = tuple(self.header)
        for r in self.rows:
            if len(r) != len(self.header):
                raise ValueError(f"row {r!r} does not match header {self.header}")

    def add(self, *values) -> None:
        if len(values) != len(self.header):
            raise ValueError(f"row has {len(values)} fields, header has {len(self.header)}")
        self.rows.append(tuple(values))

    def column(self, name: str) -> list:
        j = self.header.index(name)
        return [r[j] for r in self.rows]

    def where(self, **match) -> list[dict]:
        out = []
        for r in self.rows:
            rec = dict(zip(self.header, r))
            if all(rec[k] == v for k, v in match.items()):
                out.append(rec)
        return out

    def records(self) -> list[dict]:
        return [dict(zip(self.header, r)) for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow([format_cell(v) for v in r])
        return buf.getvalue()


def format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if isinstance(v, (list, tuple)):
        return ";".join(format_cell(x) for x in v)
    return str(v)


def emit_csv(table: ReportTable, path) -> None:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(table.to_csv())
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report to {path}: {exc.strerror}") from exc


def write_provenance(table: ReportTable, path) -> None:
    path = Path(path)
    try:
        path.write_text(json.dumps(table.provenance, indent=2, sort_keys=True, default=str) + "\n")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write provenance to {path}: {exc.strerror}") from exc


def read_csv(path) -> ReportTable:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [tuple(row) for row in r]
    return ReportTable(tuple(header), rows)
