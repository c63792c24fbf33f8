"""CSV writers and readers for metrics, samples and run summaries."""
from __future__ import annotations

import csv
from dataclasses import fields

import numpy as np

from ..trainer import MetricsRecord

METRIC_COLUMNS = tuple(f.name for f in fields(MetricsRecord))
_INT_COLUMNS = {"iter", "modes_captured", "seed"}


def fmt(value) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return f"{float(value):.9g}"


def _write_rows(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def emit_metrics_csv(records: list[MetricsRecord], path: str) -> None:
    if not records:
        raise ValueError("no records to write")
    _write_rows(path, METRIC_COLUMNS, ([getattr(r, c) for c in METRIC_COLUMNS] for r in records))


def read_metrics_csv(path: str) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [MetricsRecord(**{k: int(v) if k in _INT_COLUMNS else float(v) for k, v in row.items()})
                for row in reader]


def emit_samples(points, path: str) -> None:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 1:
        raise ValueError(f"expected an (n, 2) array with n >= 1, got shape {pts.shape}")
    _write_rows(path, ("x", "y"), pts.tolist())


def read_samples(path: str) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def emit_table(header, rows, path: str) -> None:
    _write_rows(path, header, rows)
