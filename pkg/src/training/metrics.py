"""Per-epoch metrics rows and their CSV file.

Columns, in order: epoch, split, loss, accuracy, recall, kept_tokens,
wall_ms, peak_bytes. ``recall`` is the fraction of planted tokens kept by the
S5 block; ``wall_ms`` stays 0 unless timing is recorded, so two runs with one
seed write identical files.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Union

import pandas as pd

from ..data.io import atomic_write
from ..errors import DataError

METRICS_COLUMNS = ("epoch", "split", "loss", "accuracy", "recall", "kept_tokens",
                   "wall_ms", "peak_bytes")


@dataclass
class MetricsRow:
    epoch: int
    split: str
    loss: float
    accuracy: float
    recall: float
    kept_tokens: int
    wall_ms: float = 0.0
    peak_bytes: int = 0


class MetricsLog:
    """Rows appended once per (epoch, split); rewritten in full on every flush."""

    def __init__(self, path: Union[str, Path, None] = None):
        self.path = Path(path) if path is not None else None
        self.rows: List[MetricsRow] = []

    def append(self, row: MetricsRow) -> None:
        if any(r.epoch == row.epoch and r.split == row.split for r in self.rows):
            raise DataError(f"Metrics for epoch {row.epoch} split {row.split} already recorded")
        self.rows.append(row)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows], columns=list(METRICS_COLUMNS))

    def flush(self) -> None:
        if self.path is not None:
            atomic_write(self.path, self.frame().to_csv(index=False).encode("utf-8"))

    def truncate(self, epoch: int) -> None:
        """Drop rows after ``epoch`` (resume keeps the rows already earned)."""
        self.rows = [r for r in self.rows if r.epoch <= epoch]


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such metrics file")
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in METRICS_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing metrics columns {', '.join(missing)}")
    return frame


def load_metrics_log(path: Union[str, Path]) -> MetricsLog:
    log = MetricsLog(path)
    for record in read_metrics(path).to_dict("records"):
        log.rows.append(MetricsRow(int(record["epoch"]), str(record["split"]),
                                   float(record["loss"]), float(record["accuracy"]),
                                   float(record["recall"]), int(record["kept_tokens"]),
                                   float(record["wall_ms"]), int(record["peak_bytes"])))
    return log
