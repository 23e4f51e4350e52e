#!/usr/bin/env python3
"""
Training trace logger - records per-evaluation loss and ranking metrics
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

TRACE_HEADER = ["epoch", "stage", "loss", "hr5", "ndcg5", "hr10", "ndcg10"]


@dataclass
class TraceRow:
    epoch: int
    stage: str
    loss: float
    hr5: float
    ndcg5: float
    hr10: float
    ndcg10: float

    def as_csv(self) -> List[str]:
        return [str(self.epoch), self.stage] + [_fmt(getattr(self, k)) for k in TRACE_HEADER[2:]]


def _fmt(value: float) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    return f"{value:.6f}"


class TrainingTraceLogger:
    """Collects trace rows in memory and mirrors them to a CSV file when given one.

    Construction truncates the file back to its header.
    """

    def __init__(self, trace_file: Optional[str] = None):
        self.trace_file = Path(trace_file) if trace_file else None
        self.logger = logging.getLogger("trace")
        self.rows: List[TraceRow] = []

        if self.trace_file:
            self._initialize_trace_file()

    def _initialize_trace_file(self):
        self.trace_file.parent.mkdir(parents=True, exist_ok=True)
        with open(self.trace_file, "w", newline="", encoding="utf-8") as f:
            csv.writer(f, lineterminator="\n").writerow(TRACE_HEADER)
        self.logger.debug(f"Initialized trace file: {self.trace_file}")

    def log_evaluation(self, row: TraceRow):
        self.rows.append(row)
        if self.trace_file:
            with open(self.trace_file, "a", newline="", encoding="utf-8") as f:
                csv.writer(f, lineterminator="\n").writerow(row.as_csv())
        self.logger.info(
            f"[{row.stage}] epoch {row.epoch}: loss={_fmt(row.loss)} "
            f"HR@5={row.hr5:.4f} NDCG@5={row.ndcg5:.4f}"
        )

    def stage_rows(self, stage: str) -> List[TraceRow]:
        return [r for r in self.rows if r.stage == stage]


def best_row(rows: List[TraceRow]) -> Optional[TraceRow]:
    """Row with the highest HR@5; the earliest one wins ties."""
    best = None
    for row in rows:
        if best is None or row.hr5 > best.hr5:
            best = row
    return best


def trailing_average(rows: List[TraceRow], window: int = 100) -> Optional[dict]:
    """Mean of every metric over the last `window` evaluations."""
    tail = rows[-window:]
    if not tail:
        return None
    keys = ["hr5", "ndcg5", "hr10", "ndcg10"]
    summary = {k: sum(getattr(r, k) for r in tail) / len(tail) for k in keys}
    summary["evaluations"] = len(tail)
    return summary


def read_trace(path) -> List[TraceRow]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        return [
            TraceRow(int(r["epoch"]), r["stage"], float(r["loss"]), float(r["hr5"]),
                     float(r["ndcg5"]), float(r["hr10"]), float(r["ndcg10"]))
            for r in reader
        ]
