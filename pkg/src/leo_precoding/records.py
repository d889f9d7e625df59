"""Result records and their CSV / JSON-lines export."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

__all__ = [
    "SCHEMA_VERSION",
    "ResultRecord",
    "RECORD_FIELDS",
    "export_records",
    "read_records",
    "export_histogram",
    "histogram",
]

SCHEMA_VERSION = "leo-records/1"


@dataclass(frozen=True)
class ResultRecord:
    config_hash: str
    method: str
    seed: int
    sweep_var: str
    sweep_value: float
    ee: float
    sum_rate: float
    power_used: float
    wall_time_s: float
    converged: bool
    experiment: str = ""

    def __post_init__(self):
        if not self.wall_time_s > 0:
            raise ValueError("wall_time_s must be positive")
        if not self.ee >= 0:
            raise ValueError("ee must be non-negative")

    def key(self) -> tuple:
        """Identity of the run, ignoring its outcome."""
        return (self.experiment, self.config_hash, self.method, self.seed, self.sweep_var, float(self.sweep_value))


RECORD_FIELDS = [f.name for f in fields(ResultRecord)]
_TYPES = {f.name: f.type for f in fields(ResultRecord)}


def _coerce(row: dict) -> ResultRecord:
    out = {}
    for name in RECORD_FIELDS:
        v = row[name]
        t = _TYPES[name]
        if t == "bool":
            out[name] = v if isinstance(v, bool) else str(v).lower() == "true"
        elif t == "int":
            out[name] = int(v)
        elif t == "float":
            out[name] = float(v)
        else:
            out[name] = str(v)
    return ResultRecord(**out)


def export_records(records, path, fmt: str | None = None) -> Path:
    """Write records with a schema header; the format defaults to the file suffix."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    rows = [asdict(r) for r in records]
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            fh.write(f"# schema: {SCHEMA_VERSION}\n")
            w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS)
            w.writeheader()
            for row in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    elif fmt == "jsonl":
        with path.open("w") as fh:
            fh.write(json.dumps({"schema": SCHEMA_VERSION, "fields": RECORD_FIELDS}) + "\n")
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    return path


def read_records(path) -> list[ResultRecord]:
    path = Path(path)
    if path.suffix == ".csv":
        with path.open(newline="") as fh:
            first = fh.readline()
            if not first.startswith("# schema:"):
                raise ValueError(f"{path}: missing schema header")
            return [_coerce(r) for r in csv.DictReader(fh)]
    if path.suffix == ".jsonl":
        lines = path.read_text().splitlines()
        if not lines or "schema" not in json.loads(lines[0]):
            raise ValueError(f"{path}: missing schema header")
        return [_coerce(json.loads(line)) for line in lines[1:] if line.strip()]
    raise ValueError(f"cannot infer the format of {path}")


def histogram(values, bin_width: float | None = None, n_bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Counts and edges covering every value; a fixed width overrides ``n_bins``."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return np.zeros(0, dtype=int), np.zeros(1)
    lo, hi = float(values.min()), float(values.max())
    if bin_width is not None:
        if bin_width <= 0:
            raise ValueError("bin width must be positive")
        start = math.floor(lo / bin_width) * bin_width
        n = max(int(math.floor((hi - start) / bin_width)) + 1, 1)
        edges = start + bin_width * np.arange(n + 1)
    else:
        edges = np.linspace(lo, hi if hi > lo else lo + 1.0, n_bins + 1)
    counts, edges = np.histogram(values, bins=edges)
    return counts, edges


def export_histogram(records, path, bin_width: float | None = None, n_bins: int = 20) -> Path:
    """One CSV row per (method, bin) with the bin's EE range and count."""
    path = Path(path)
    by_method: dict[str, list[float]] = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r.ee)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema: {SCHEMA_VERSION}-histogram\n")
        w = csv.writer(fh)
        w.writerow(["method", "bin_low", "bin_high", "count"])
        for method, vals in sorted(by_method.items()):
            counts, edges = histogram(vals, bin_width, n_bins)
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                w.writerow([method, repr(float(lo)), repr(float(hi)), int(c)])
    return path
