"""Run metrics as line-delimited JSON.

``metrics.jsonl`` carries the deterministic columns and is byte-identical
across replays of the same config and seed. Wall-clock times vary between
replays, so they go to ``timing.jsonl`` under the same ``step`` keys;
:func:`read_metrics` joins the two back into :class:`MetricsRecord` rows.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

__all__ = ["MetricsRecord", "MetricsWriter", "read_metrics"]

DETERMINISTIC_COLUMNS = ("step", "method", "acc", "per_class_acc", "ensemble_size", "kernel_count")


@dataclass
class MetricsRecord:
    step: int
    method: str
    acc: float
    per_class_acc: list[float] = field(default_factory=list)
    wall_ms: float | None = None
    ensemble_size: int = 0
    kernel_count: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.acc <= 1.0:
            raise ValueError(f"accuracy {self.acc} outside [0, 1]")


class MetricsWriter:
    """Appends records as they are produced; each line is flushed immediately."""

    def __init__(self, path, timing_path=None):
        self.path = Path(path)
        self.timing_path = Path(timing_path) if timing_path else self.path.with_name(
            self.path.stem.replace("metrics", "timing") + self.path.suffix)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("")
        self.timing_path.write_text("")
        self._last_step: int | None = None

    def write(self, rec: MetricsRecord) -> None:
        if self._last_step is not None and rec.step <= self._last_step:
            raise ValueError(f"step {rec.step} does not advance past {self._last_step}")
        self._last_step = rec.step
        row = asdict(rec)
        with self.path.open("a") as fh:
            fh.write(json.dumps({k: row[k] for k in DETERMINISTIC_COLUMNS}) + "\n")
        with self.timing_path.open("a") as fh:
            fh.write(json.dumps({"step": rec.step, "wall_ms": rec.wall_ms}) + "\n")


def read_metrics(path, timing_path=None) -> list[MetricsRecord]:
    path = Path(path)
    timing_path = Path(timing_path) if timing_path else path.with_name(
        path.stem.replace("metrics", "timing") + path.suffix)
    wall = {}
    if timing_path.exists():
        for line in timing_path.read_text().splitlines():
            row = json.loads(line)
            wall[row["step"]] = row["wall_ms"]
    records = []
    for line in path.read_text().splitlines():
        row = json.loads(line)
        records.append(MetricsRecord(wall_ms=wall.get(row["step"]), **row))
    return records
