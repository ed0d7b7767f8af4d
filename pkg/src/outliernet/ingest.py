"""Load sensor-trace files, impute missing epochs, expose per-sensor streams.

Traces are delimiter-separated text, one record per line, with a declared
column mapping. Records carry a sensor id, an epoch (per-sensor sequence
number), a temperature reading and fixed x/y coordinates. Real deployments
lose samples; gaps are filled with the mean of the readings in a sliding
window preceding the gap so temporal trends survive.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TraceRecord:
    sensor_id: int
    epoch: int
    temperature: float
    x: float
    y: float


@dataclass(frozen=True)
class TraceSchema:
    """Column mapping and delimiter for a trace file.

    ``delimiter=None`` splits on any whitespace.
    """

    sensor_id: int = 0
    epoch: int = 1
    temperature: int = 2
    x: int = 3
    y: int = 4
    delimiter: Optional[str] = None

    def parse_line(self, line: str) -> TraceRecord:
        parts = line.split(self.delimiter)
        return TraceRecord(
            sensor_id=int(parts[self.sensor_id]),
            epoch=int(parts[self.epoch]),
            temperature=float(parts[self.temperature]),
            x=float(parts[self.x]),
            y=float(parts[self.y]),
        )


@dataclass
class LoadReport:
    total_lines: int = 0
    parsed: int = 0
    skipped: int = 0
    duplicate_epochs: int = 0
    sensors: int = 0

    def as_dict(self) -> dict:
        return {
            "total_lines": self.total_lines,
            "parsed": self.parsed,
            "skipped": self.skipped,
            "duplicate_epochs": self.duplicate_epochs,
            "sensors": self.sensors,
        }


def load_trace(path, schema: TraceSchema = TraceSchema()):
    """Read a trace into per-sensor, epoch-ordered record lists.

    Malformed lines are counted and skipped; duplicate epochs keep the
    first record seen. Raises ValueError when nothing parses.
    Returns (streams, report) with streams a dict sensor_id -> [TraceRecord].
    """
    path = Path(path)
    report = LoadReport()
    streams: dict[int, list[TraceRecord]] = {}
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            report.total_lines += 1
            try:
                rec = schema.parse_line(line)
            except (ValueError, IndexError):
                report.skipped += 1
                continue
            report.parsed += 1
            streams.setdefault(rec.sensor_id, []).append(rec)
    if report.parsed == 0:
        raise ValueError(f"no valid records in {path}")
    for sensor, records in streams.items():
        records.sort(key=lambda r: r.epoch)
        deduped = []
        for r in records:
            if deduped and deduped[-1].epoch == r.epoch:
                report.duplicate_epochs += 1
                continue
            deduped.append(r)
        streams[sensor] = deduped
    report.sensors = len(streams)
    if report.skipped:
        log.info("trace %s: skipped %d malformed of %d lines", path, report.skipped, report.total_lines)
    return streams, report


def impute_missing(records: Sequence[TraceRecord], w_epochs: int,
                   epoch_range: Optional[tuple] = None) -> list[TraceRecord]:
    """Fill epoch gaps with the mean of the preceding window's readings.

    The window slides over the already-produced output (imputed values feed
    later imputations), holding up to ``w_epochs`` readings. Gaps before
    the first observation take its value. Coordinates of observed records
    pass through untouched; imputed records reuse the first observation's.
    Output covers every epoch in the range with no gaps; an empty input
    yields an empty output.
    """
    if w_epochs < 1:
        raise ValueError(f"imputation window must be >= 1 epoch, got {w_epochs}")
    records = sorted(records, key=lambda r: r.epoch)
    if not records:
        return []
    first = records[0]
    lo, hi = epoch_range if epoch_range else (records[0].epoch, records[-1].epoch)
    by_epoch = {r.epoch: r for r in records}
    out: list[TraceRecord] = []
    history: list[float] = []
    for epoch in range(lo, hi + 1):
        rec = by_epoch.get(epoch)
        if rec is None:
            if history:
                window = history[-w_epochs:]
                value = sum(window) / len(window)
            else:
                value = first.temperature
            rec = TraceRecord(sensor_id=first.sensor_id, epoch=epoch,
                              temperature=value, x=first.x, y=first.y)
        out.append(rec)
        history.append(rec.temperature)
    return out


def export_trace(streams: dict, path, schema: TraceSchema = TraceSchema()):
    """Write streams back out in the same delimiter-separated layout."""
    delim = schema.delimiter or "\t"
    width = max(schema.sensor_id, schema.epoch, schema.temperature, schema.x, schema.y) + 1
    with Path(path).open("w") as fh:
        for sensor in sorted(streams):
            for r in streams[sensor]:
                cells = [""] * width
                cells[schema.sensor_id] = str(r.sensor_id)
                cells[schema.epoch] = str(r.epoch)
                cells[schema.temperature] = repr(r.temperature)
                cells[schema.x] = repr(r.x)
                cells[schema.y] = repr(r.y)
                fh.write(delim.join(cells) + "\n")
