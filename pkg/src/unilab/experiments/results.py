"""Long-format result tables with deterministic CSV / JSON output."""

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

COLUMNS = ("experiment", "ensemble", "seed", "x", "metric", "value")
ZERO_SIGNAL = "ZeroSignal"


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


@dataclass
class ResultTable:
    experiment: str
    header: dict
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add(self, ensemble, seed, x, metric, value):
        self.rows.append((self.experiment, str(ensemble), int(seed), float(x), str(metric), value))

    def extend(self, rows):
        for r in rows:
            self.add(*r)

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: (r[1], r[2], r[3], r[4]))

    def check_unique(self):
        keys = [(r[1], r[2], r[3], r[4]) for r in self.rows]
        return len(keys) == len(set(keys))

    def select(self, metric, ensemble=None):
        """``{(ensemble, seed, x): value}`` for one metric."""
        return {(r[1], r[2], r[3]): r[5] for r in self.rows
                if r[4] == metric and (ensemble is None or r[1] == ensemble)}

    def medians(self, metric, ensemble):
        """Per-x median over seeds; returns (xs, medians)."""
        by_x = {}
        for (ens, _, x), v in self.select(metric, ensemble).items():
            if not isinstance(v, str):
                by_x.setdefault(x, []).append(float(v))
        xs = sorted(by_x)
        return np.array(xs), np.array([float(np.median(by_x[x])) for x in xs])

    def ensembles(self):
        return sorted({r[1] for r in self.rows})

    def to_csv(self):
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.header, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.sorted_rows():
            w.writerow([r[0], r[1], r[2], _fmt(r[3]), r[4], _fmt(r[5])])
        return buf.getvalue()

    def to_json(self):
        return json.dumps({"header": self.header, "experiment": self.experiment,
                           "summary": _plain(self.summary)}, sort_keys=True, indent=1) + "\n"

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        stem = os.path.join(directory, self.experiment)
        with open(stem + ".csv", "w") as fh:
            fh.write(self.to_csv())
        with open(stem + ".json", "w") as fh:
            fh.write(self.to_json())
        return stem + ".csv", stem + ".json"


def _plain(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def read_csv(text):
    """Parse :meth:`ResultTable.to_csv` output back into (header, rows)."""
    lines = text.splitlines()
    header = json.loads(lines[0][2:])
    rows = []
    for rec in csv.DictReader(lines[1:]):
        v = rec["value"]
        rows.append((rec["experiment"], rec["ensemble"], int(rec["seed"]), float(rec["x"]),
                     rec["metric"], v if v == ZERO_SIGNAL else float(v)))
    return header, rows
