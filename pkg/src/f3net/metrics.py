"""Confusion-matrix evaluation metrics and report serialization.

All five metrics of a row derive from one voxel-level confusion matrix.
When a metric's denominator is zero the score is 1 if the two masks agree
on the quantity's support and 0 otherwise, so a perfect prediction of a
lesion-free case scores 1 across the board.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ShapeError

METRIC_NAMES = ("dsc", "accuracy", "sensitivity", "specificity", "precision")
CSV_HEADER = ("dataset", "case_id") + METRIC_NAMES


@dataclass(frozen=True)
class MetricsRow:
    """Per-case metric record; values are fractions in [0, 1]."""

    case_id: str
    dsc: float
    accuracy: float
    sensitivity: float
    specificity: float
    precision: float

    def values(self) -> tuple[float, ...]:
        return (self.dsc, self.accuracy, self.sensitivity, self.specificity, self.precision)


def _ratio(num: int, denom: int, agree: bool) -> float:
    if denom == 0:
        return 1.0 if agree else 0.0
    return num / denom


def confusion_metrics(pred: np.ndarray, target: np.ndarray, case_id: str = "") -> MetricsRow:
    """Compute DSC, accuracy, sensitivity, specificity, precision.

    Args:
        pred: binary prediction mask (values in {0, 1}).
        target: binary ground-truth mask of the same shape.
        case_id: identifier copied into the row.

    Raises:
        ShapeError: shape disagreement or non-binary values.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    if not np.isin(pred, (0, 1)).all() or not np.isin(target, (0, 1)).all():
        raise ShapeError("confusion_metrics requires binary masks")
    p = pred.astype(bool)
    t = target.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(np.count_nonzero(~p & ~t))
    return MetricsRow(
        case_id=case_id,
        dsc=_ratio(2 * tp, 2 * tp + fp + fn, agree=(fp == 0 and fn == 0)),
        accuracy=(tp + tn) / max(tp + tn + fp + fn, 1),
        sensitivity=_ratio(tp, tp + fn, agree=(fp == 0)),
        specificity=_ratio(tn, tn + fp, agree=(fn == 0)),
        precision=_ratio(tp, tp + fp, agree=(fn == 0)),
    )


def mean_row(rows: Sequence[MetricsRow], case_id: str = "mean") -> MetricsRow:
    """Unweighted mean across rows ("Av." convention)."""
    if not rows:
        raise ShapeError("cannot average zero metric rows")
    stacked = np.array([r.values() for r in rows], dtype=np.float64)
    means = stacked.mean(axis=0)
    return MetricsRow(case_id, *(float(v) for v in means))


def write_report_csv(path, dataset: str, rows: Sequence[MetricsRow], summary: MetricsRow) -> None:
    """Write per-case rows plus the summary row with the fixed header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for row in list(rows) + [summary]:
            writer.writerow([dataset, row.case_id] + [f"{v:.6f}" for v in row.values()])


def render_markdown_table(entries: Sequence[tuple[str, MetricsRow]]) -> str:
    """Render summary rows as a markdown table with percentage columns."""
    lines = [
        "| Dataset | Av. DSC (%) | Accuracy | Sensitivity | Specificity | Precision |",
        "| --- | --- | --- | --- | --- | --- |",
    ]
    for dataset, row in entries:
        cells = " | ".join(f"{100.0 * v:.2f}" for v in row.values())
        lines.append(f"| {dataset} | {cells} |")
    return "\n".join(lines) + "\n"
