"""CSV reports with embedded run metadata.

Metadata are written as leading ``# key: value`` comment lines, followed by a
header row and data rows. Floats use 17 significant digits so values
round-trip exactly; the text depends only on the rows and metadata, which
makes reruns byte-identical.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


@dataclass
class CsvReport:
    name: str
    columns: list
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError("row has %d cells, expected %d" % (len(values), len(self.columns)))
        self.rows.append(tuple(values))

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]

    def where(self, **match) -> list[dict]:
        """Rows as dicts whose cells equal every ``match`` value."""
        out = []
        for r in self.rows:
            d = dict(zip(self.columns, r))
            if all(d[k] == v for k, v in match.items()):
                out.append(d)
        return out

    def to_text(self) -> str:
        buf = io.StringIO()
        for k in sorted(self.metadata):
            buf.write("# %s: %s\n" % (k, self.metadata[k]))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_cell(v) for v in r])
        return buf.getvalue()

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_text())


def read_csv(path) -> tuple[dict, list, list]:
    """Parse a report back into ``(metadata, columns, rows)`` of strings."""
    meta, lines = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("# "):
                k, _, v = line[2:].rstrip("\n").partition(": ")
                meta[k] = v
            else:
                lines.append(line)
    rows = list(csv.reader(lines))
    return meta, rows[0], rows[1:]
