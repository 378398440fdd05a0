"""Snapshot files: one CSV per snapshot, columns ``index,r,v,weight``."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .core import Ensemble


def snapshot_name(time: float) -> str:
    return f"snap_t{time:.4f}.csv"


def write_snapshot(path, ensemble: Ensemble) -> int:
    """Write ``ensemble``; floats use 17 significant digits.  Returns bytes written."""
    lines = ["index,r,v,weight"]
    for i, (r, v, w) in enumerate(zip(ensemble.r.tolist(), ensemble.v.tolist(), ensemble.weights.tolist())):
        lines.append(f"{i},{r:.17g},{v:.17g},{w:.17g}")
    data = ("\n".join(lines) + "\n").encode("ascii")
    Path(path).write_bytes(data)
    return len(data)


def read_snapshot(path, time: float = 0.0) -> Ensemble:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda row: int(row["index"]))
    r = np.array([float(row["r"]) for row in rows])
    v = np.array([float(row["v"]) for row in rows])
    w = np.array([float(row["weight"]) for row in rows])
    return Ensemble(r, v, w, time)
