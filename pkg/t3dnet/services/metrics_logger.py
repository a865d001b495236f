"""
Per-epoch metrics CSV writer.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import List, Union

from t3dnet.core.errors import ReportError
from t3dnet.core.logging import get_logger
from t3dnet.models.internal import CSV_COLUMNS, CSV_HEADER, EpochMetrics
from t3dnet.storage.files import atomic_write_csv

logger = get_logger(__name__)


class MetricsLogger:
    """
    Collects EpochMetrics rows and rewrites the CSV atomically after each
    epoch, so a crashed run leaves a complete file up to its last epoch.
    """

    def __init__(self, path: Union[str, Path]) -> None:
        self.path = Path(path)
        self.rows: List[EpochMetrics] = []
        self._flush()

    def log(self, metrics: EpochMetrics) -> None:
        self.rows.append(metrics)

    def flush(self) -> None:
        self._flush()

    def _flush(self) -> None:
        atomic_write_csv(self.path, CSV_COLUMNS, (row.csv_fields() for row in self.rows))

    def best_test_oa(self) -> float:
        scores = [row.oa for row in self.rows if row.split == "test"]
        return max(scores) if scores else 0.0


def read_metrics(path: Union[str, Path]) -> List[EpochMetrics]:
    """
    Parse a metrics CSV back into rows.

    Raises:
        ReportError: header differs from the shared schema or a row is malformed
    """
    path = Path(path)
    rows: List[EpochMetrics] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        found = reader.fieldnames
        if found is None or tuple(found) != CSV_COLUMNS:
            shown = ",".join(found) if found else "<empty>"
            raise ReportError(f"{path}: metrics header '{shown}' does not match '{CSV_HEADER}'")
        for record in reader:
            where = f"{path}:{reader.line_num}"
            extra = record.pop(None, None) or []
            present = [value for value in record.values() if value is not None]
            if extra or len(present) != len(CSV_COLUMNS):
                raise ReportError(f"{where}: expected {len(CSV_COLUMNS)} fields, got {len(present) + len(extra)}")
            try:
                rows.append(EpochMetrics.model_validate(record))
            except ValueError as exc:
                raise ReportError(f"{where}: {exc}") from None
    return rows
