"""Evaluation arithmetic: foreground IoU / mIoU and classification counts."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

REPORT_SCHEMA_VERSION = 1


class UndefinedMetricError(ValueError):
    """A ratio metric was requested with a zero denominator."""


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Foreground intersection-over-union. Two empty masks agree perfectly: 1.0."""
    p = np.asarray(pred) > 0
    g = np.asarray(gt) > 0
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    union = int(np.logical_or(p, g).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(p, g).sum())
    return inter / union


def miou(pairs: list[tuple[np.ndarray, np.ndarray]]) -> float:
    """Unweighted mean of per-image foreground IoU."""
    if not pairs:
        raise ValueError("miou requires at least one (pred, gt) pair")
    return float(np.mean([iou(p, g) for p, g in pairs]))


def precision_recall(cm: ConfusionMatrix) -> tuple[float, float]:
    """Exact rational precision/recall from counts, converted to float last."""
    if cm.tp + cm.fp == 0:
        raise UndefinedMetricError("precision undefined: tp + fp == 0")
    if cm.tp + cm.fn == 0:
        raise UndefinedMetricError("recall undefined: tp + fn == 0")
    precision = Fraction(cm.tp, cm.tp + cm.fp)
    recall = Fraction(cm.tp, cm.tp + cm.fn)
    return float(precision), float(recall)


@dataclass
class EvalReport:
    per_image_iou: list[tuple[str, float]]
    miou: float
    confusion: ConfusionMatrix | None = None
    precision: float | None = None
    recall: float | None = None
    schema_version: int = field(default=REPORT_SCHEMA_VERSION)

    @classmethod
    def from_pairs(cls, named_pairs: list[tuple[str, np.ndarray, np.ndarray]]) -> "EvalReport":
        per_image = [(name, iou(p, g)) for name, p, g in named_pairs]
        if not per_image:
            raise ValueError("evaluation requires at least one image")
        return cls(per_image, float(np.mean([v for _, v in per_image])))

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "miou": self.miou,
            "per_image_iou": [{"image_id": n, "iou": v} for n, v in self.per_image_iou],
            "confusion": self.confusion.to_dict() if self.confusion else None,
            "precision": self.precision,
            "recall": self.recall,
        }

    def save_json(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")

    def save_csv(self, path: Path | str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_id", "iou"])
            for name, value in self.per_image_iou:
                writer.writerow([name, f"{value:.6f}"])
            writer.writerow(["mIoU", f"{self.miou:.6f}"])
