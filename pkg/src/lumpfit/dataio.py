"""Run-record ingestion, resampling, and CSV export.

Canonical run CSV: header ``t,temperature,power`` (seconds, Celsius, watts),
one row per sample. Files holding several runs carry a leading ``run_id``
column. All exports are UTF-8, newline-terminated, full float precision
(values round-trip exactly through ``float``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyRun, MalformedRow, NonMonotoneTime, SpanTooShort
from .ode import TimeGrid

__all__ = [
    "RawRecord",
    "ExperimentRun",
    "load_runs",
    "resample",
    "write_run_csv",
    "run_to_record",
]

RUN_COLUMNS = ("t", "temperature", "power")


@dataclass
class RawRecord:
    """As-recorded samples; timestamps need not be uniform."""

    t: np.ndarray
    temperature: np.ndarray
    power: np.ndarray
    run_id: str = "run"

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.temperature = np.asarray(self.temperature, dtype=float)
        self.power = np.asarray(self.power, dtype=float)
        if self.t.size < 2:
            raise EmptyRun(f"{self.run_id}: need at least 2 rows, got {self.t.size}")
        if not (self.t.size == self.temperature.size == self.power.size):
            raise ValueError(f"{self.run_id}: column lengths differ")
        for name, col in (("t", self.t), ("temperature", self.temperature), ("power", self.power)):
            if not np.all(np.isfinite(col)):
                raise ValueError(f"{self.run_id}: non-finite {name} value")
        if np.any(np.diff(self.t) <= 0):
            raise NonMonotoneTime(f"{self.run_id}: timestamps not strictly increasing")


@dataclass
class ExperimentRun:
    """One plunge/dwell record on a uniform grid."""

    id: str
    grid: TimeGrid
    temperatures: np.ndarray
    powers: np.ndarray

    def __post_init__(self):
        self.temperatures = np.asarray(self.temperatures, dtype=float)
        self.powers = np.asarray(self.powers, dtype=float)
        n = self.grid.n_points
        if self.temperatures.size != n or self.powers.size != n:
            raise ValueError(
                f"{self.id}: traces must have {n} samples "
                f"(got {self.temperatures.size}/{self.powers.size})")
        if not (np.all(np.isfinite(self.temperatures)) and np.all(np.isfinite(self.powers))):
            raise ValueError(f"{self.id}: non-finite trace value")

    @property
    def n_points(self) -> int:
        return self.grid.n_points

    def times(self) -> np.ndarray:
        return self.grid.times()


def _parse_float(text: str, line_no: int, path) -> float:
    try:
        return float(text)
    except ValueError:
        raise MalformedRow(f"{path}:{line_no}: cannot parse {text!r} as a number") from None


def _records_from_rows(rows, path) -> list[RawRecord]:
    """rows: iterable of (line_no, list-of-fields) after the header."""
    header_done = False
    has_run_id = False
    groups: dict[str, list[tuple[float, float, float]]] = {}
    order: list[str] = []
    for line_no, fields in rows:
        fields = [f.strip() for f in fields]
        if not header_done:
            if tuple(fields) == RUN_COLUMNS:
                has_run_id = False
            elif tuple(fields) == ("run_id",) + RUN_COLUMNS:
                has_run_id = True
            else:
                raise MalformedRow(
                    f"{path}:{line_no}: expected header "
                    f"{','.join(RUN_COLUMNS)} (optionally preceded by run_id), "
                    f"got {','.join(fields)!r}")
            header_done = True
            continue
        if not any(fields):
            continue
        expected = 4 if has_run_id else 3
        if len(fields) != expected:
            raise MalformedRow(f"{path}:{line_no}: expected {expected} fields, got {len(fields)}")
        run_id = fields[0] if has_run_id else "run"
        t, temp, pw = (_parse_float(f, line_no, path) for f in fields[-3:])
        if run_id not in groups:
            groups[run_id] = []
            order.append(run_id)
        groups[run_id].append((t, temp, pw))
    if not header_done:
        raise MalformedRow(f"{path}:1: empty file")
    records = []
    for run_id in order:
        data = np.array(groups[run_id])
        if data.shape[0] < 2:
            raise EmptyRun(f"{path}: run {run_id!r} has {data.shape[0]} row(s)")
        records.append(RawRecord(t=data[:, 0], temperature=data[:, 1],
                                 power=data[:, 2], run_id=run_id))
    return records


def load_runs(path) -> list[RawRecord]:
    """Parse one CSV file, or every ``*.csv`` in a directory (sorted by name)."""
    from pathlib import Path

    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.csv"))
        if not files:
            raise FileNotFoundError(f"no .csv files in {p}")
        records = []
        for f in files:
            for rec in load_runs(f):
                if rec.run_id == "run":
                    rec.run_id = f.stem
                records.append(rec)
        return records
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = [(i + 1, fields) for i, fields in enumerate(reader)]
    return _records_from_rows(rows, p)


def resample(record: RawRecord, dt: float) -> ExperimentRun:
    """Linear interpolation onto a uniform grid anchored at the first timestamp."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    span = record.t[-1] - record.t[0]
    if span < dt:
        raise SpanTooShort(f"{record.run_id}: span {span:.6g}s < dt {dt:.6g}s")
    grid = TimeGrid(t_start=float(record.t[0]), t_end=float(record.t[-1]), dt=float(dt))
    times = grid.times()
    return ExperimentRun(
        id=record.run_id,
        grid=grid,
        temperatures=np.interp(times, record.t, record.temperature),
        powers=np.interp(times, record.t, record.power),
    )


def run_to_record(run: ExperimentRun) -> RawRecord:
    return RawRecord(t=run.times(), temperature=run.temperatures,
                     power=run.powers, run_id=run.id)


def write_run_csv(run, path) -> None:
    """Write a RawRecord or ExperimentRun in the canonical format."""
    if isinstance(run, ExperimentRun):
        t, temp, pw = run.times(), run.temperatures, run.powers
    else:
        t, temp, pw = run.t, run.temperature, run.power
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUN_COLUMNS)
        for row in zip(t, temp, pw):
            writer.writerow([repr(float(v)) for v in row])
