"""CSV/JSON persistence with deterministic payloads, and aggregation of
sweep results into summary tables.

Every output file starts with ``#``-prefixed metadata lines carrying the
root seed, a hash of the resolved configuration, the suite version, and a
timestamp; the timestamp is the only line allowed to differ between
identical reruns.  Floats are printed with 17 significant digits for a
lossless round trip.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .numeric_core import ParameterError

__all__ = [
    "SummaryRow",
    "fmt_float",
    "config_hash",
    "atomic_write_text",
    "write_csv",
    "read_csv",
    "write_json",
    "aggregate_rows",
    "aggregate_report",
    "format_summary_table",
    "SWEEP_FIELDS",
]

SWEEP_FIELDS = ("example", "n_envs", "method", "data_seed", "hparam_id",
                "lambda", "gamma", "lr", "val_risk", "test_metric",
                "test_metric_max")

SUMMARY_FIELDS = ("example", "n_envs", "method", "mean_metric", "std_metric")


@dataclass
class SummaryRow:
    example: str
    n_envs: int
    method: str
    mean_metric: float
    std_metric: float


def fmt_float(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def config_hash(cfg):
    payload = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def _meta_lines(meta):
    lines = [f"# {k}={v}" for k, v in meta.items()]
    lines.append(f"# version={__version__}")
    lines.append(f"# timestamp={datetime.now(timezone.utc).isoformat()}")
    return lines


def atomic_write_text(path, text):
    dirname = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, fieldnames, rows, meta):
    """Write rows (sequences or dicts) with metadata header, atomically."""
    out = _meta_lines(meta)
    out.append(",".join(fieldnames))
    for row in rows:
        if isinstance(row, dict):
            row = [row[f] for f in fieldnames]
        out.append(",".join(fmt_float(v) for v in row))
    atomic_write_text(path, "\n".join(out) + "\n")


def read_csv(path):
    """Read a metadata-prefixed CSV; returns (meta, fieldnames, rows of
    string dicts)."""
    meta = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        elif line:
            body.append(line)
    if not body:
        raise ParameterError(f"{path}: no header row")
    reader = csv.DictReader(body)
    return meta, tuple(reader.fieldnames), list(reader)


def write_json(path, payload, meta):
    doc = {"meta": {**meta, "version": __version__,
                    "timestamp": datetime.now(timezone.utc).isoformat()},
           **payload}
    atomic_write_text(path, json.dumps(doc, indent=2, default=float) + "\n")


def sweep_row_tuple(row):
    return (row.example, row.n_envs, row.method, row.data_seed, row.hparam_id,
            row.lam, row.gamma, row.lr, row.val_risk, row.test_metric,
            row.test_metric_max)


def aggregate_rows(records):
    """Aggregate parsed sweep records: per (example, n_envs, method) and
    seed, keep the query with minimal validation risk, then report the
    population mean and std of the test metric over seeds."""
    groups = {}
    for rec in records:
        key = (rec["example"], int(rec["n_envs"]), rec["method"])
        seed = int(rec["data_seed"])
        val = float(rec["val_risk"])
        metric = float(rec["test_metric"])
        best = groups.setdefault(key, {})
        if seed not in best or val < best[seed][0]:
            best[seed] = (val, metric)
    out = []
    for (example, n_envs, method), best in sorted(groups.items()):
        metrics = np.array([m for _, m in best.values()])
        out.append(SummaryRow(example=example, n_envs=n_envs, method=method,
                              mean_metric=float(metrics.mean()),
                              std_metric=float(metrics.std())))
    return out


def aggregate_report(sweep_files):
    """Parse sweep CSVs and aggregate them into summary rows."""
    records = []
    for path in sweep_files:
        _, fields, rows = read_csv(path)
        missing = set(SWEEP_FIELDS) - set(fields)
        if missing:
            raise ParameterError(f"{path}: missing columns {sorted(missing)}")
        for i, row in enumerate(rows):
            try:
                records.append({
                    "example": row["example"],
                    "n_envs": row["n_envs"],
                    "method": row["method"],
                    "data_seed": row["data_seed"],
                    "val_risk": row["val_risk"],
                    "test_metric": row["test_metric"],
                })
                float(row["val_risk"]), float(row["test_metric"])
            except (KeyError, ValueError) as exc:
                raise ParameterError(f"{path}: bad row {i + 2}: {exc}") from exc
    return aggregate_rows(records)


def format_summary_table(rows):
    """Fixed-width text table with metrics shown as 'mean ± std'."""
    header = f"{'example':<10}{'envs':>6}{'method':>8}  {'metric':>14}"
    lines = [header, "-" * len(header)]
    for r in rows:
        cell = f"{r.mean_metric:.2f} ± {r.std_metric:.2f}"
        lines.append(f"{r.example:<10}{r.n_envs:>6}{r.method:>8}  {cell:>14}")
    return "\n".join(lines)


def summary_csv_rows(rows):
    return [(r.example, r.n_envs, r.method, r.mean_metric, r.std_metric)
            for r in rows]
