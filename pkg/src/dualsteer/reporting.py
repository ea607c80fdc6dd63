"""CSV and JSON writers with a fixed schema and locale-independent numbers.

Trace CSV columns, in order::

    step, lambda, target_prob, pair_mass, offtarget_kl, rank_diff,
    dual_cosine, projection, logit

``lambda`` holds the ``d`` coordinates separated by spaces when
``d <= LAMBDA_INLINE_MAX``; otherwise it holds ``sha256:`` plus the first 16
hex digits of the digest of the little-endian float64 bytes, and the exact
points live in a sibling ``.npy`` file.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .metrics import BinnedSummary, StepMetrics

TRACE_COLUMNS = (
    "step",
    "lambda",
    "target_prob",
    "pair_mass",
    "offtarget_kl",
    "rank_diff",
    "dual_cosine",
    "projection",
    "logit",
)
SUMMARY_COLUMNS = ("bin_lo", "bin_hi", "metric", "mean", "sem", "count")
DIAGNOSTIC_COLUMNS = ("run", "method", "step", "target_prob", "dual_cosine", "projection", "logit")
LAMBDA_INLINE_MAX = 256


def fmt(x) -> str:
    """Shortest round-trip decimal; ``nan``, ``inf`` and ``-inf`` spelled out."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def lambda_cell(lam: np.ndarray) -> str:
    lam = np.asarray(lam, dtype="<f8")
    if lam.size <= LAMBDA_INLINE_MAX:
        return " ".join(fmt(x) for x in lam)
    return "sha256:" + hashlib.sha256(lam.tobytes()).hexdigest()[:16]


def parse_lambda_cell(cell: str) -> np.ndarray | None:
    """Inverse of :func:`lambda_cell`; ``None`` for hashed cells."""
    if cell.startswith("sha256:"):
        return None
    return np.array([float(x) for x in cell.split()], dtype=np.float64)


def atomic_write_text(path, text: str) -> None:
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(c) if isinstance(c, (float, np.floating)) else c for c in row])
    return buf.getvalue()


def trace_rows(points: np.ndarray, steps: Sequence[int], metrics: Sequence[StepMetrics]) -> list[list]:
    return [
        [
            int(i),
            lambda_cell(points[i]),
            m.target_prob,
            m.pair_mass,
            m.offtarget_kl,
            m.rank_diff,
            m.dual_cosine,
            m.projection,
            m.logit,
        ]
        for i, m in zip(steps, metrics)
    ]


def write_trace(path, points, steps, metrics) -> None:
    points = np.asarray(points, dtype=np.float64)
    atomic_write_text(path, csv_text(TRACE_COLUMNS, trace_rows(points, steps, metrics)))


def read_trace(path) -> tuple[list[int], list[str], list[dict]]:
    """Rows of a trace CSV as ``(steps, lambda_cells, metric_dicts)``."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"{path}: not a trace CSV (header {header})")
        steps, cells, rows = [], [], []
        for rec in reader:
            steps.append(int(rec[0]))
            cells.append(rec[1])
            rows.append({k: float(v) for k, v in zip(TRACE_COLUMNS[2:], rec[2:])})
    return steps, cells, rows


def write_summary_csv(path, summary: BinnedSummary, metric: str | None = None) -> None:
    rows = [
        [r["bin_lo"], r["bin_hi"], r["metric"], r["mean"], r["sem"], r["count"]]
        for r in summary.rows()
        if metric is None or r["metric"] == metric
    ]
    atomic_write_text(path, csv_text(SUMMARY_COLUMNS, rows))


def write_json(path, data) -> None:
    atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n")
