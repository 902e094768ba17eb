"""Evaluation metrics: confusion matrix, per-class and weighted F1."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from bcaf.errors import ValidationError


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Counts with true class as row, predicted class as column."""
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if t.shape != p.shape:
        raise ValidationError(f"label/prediction lengths differ: {t.shape} vs {p.shape}")
    if t.size and (t.min() < 0 or t.max() >= num_classes):
        raise ValidationError(f"true labels outside [0, {num_classes})")
    if p.size and (p.min() < 0 or p.max() >= num_classes):
        raise ValidationError(f"predictions outside [0, {num_classes})")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (t, p), 1)
    return conf


def per_class_f1(conf: np.ndarray) -> np.ndarray:
    """F1 per class from a confusion matrix; undefined cases are 0."""
    tp = np.diag(conf).astype(np.float64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    precision = np.divide(tp, tp + fp, out=np.zeros_like(tp), where=(tp + fp) > 0)
    recall = np.divide(tp, tp + fn, out=np.zeros_like(tp), where=(tp + fn) > 0)
    denom = precision + recall
    return np.divide(
        2.0 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0
    )


def weighted_f1(y_true, y_pred, num_classes: int) -> float:
    """Support-weighted mean of per-class F1 scores."""
    conf = confusion_matrix(y_true, y_pred, num_classes)
    support = conf.sum(axis=1).astype(np.float64)
    total = support.sum()
    if total == 0:
        return 0.0
    return float((per_class_f1(conf) * support / total).sum())


def accuracy(y_true, y_pred) -> float:
    t = np.asarray(y_true)
    p = np.asarray(y_pred)
    return float((t == p).mean()) if t.size else 0.0


@dataclass
class EpochStats:
    epoch: int
    loss_connection: float
    loss_audio: float
    loss_text: float
    loss_fused: float
    loss_total: float
    val_weighted_f1: float

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


@dataclass
class MetricsReport:
    weighted_f1: float
    per_class_f1: np.ndarray
    confusion: np.ndarray
    accuracy: float
    loss_history: List[EpochStats] = field(default_factory=list)
    epochs: int = 0
    best_epoch: int = 0

    def to_dict(self) -> Dict:
        return {
            "weighted_f1": self.weighted_f1,
            "per_class_f1": [float(x) for x in self.per_class_f1],
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "loss_history": [e.to_dict() for e in self.loss_history],
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def confusion_to_csv(conf: np.ndarray) -> str:
    """Header row of predicted classes, one row per true class."""
    c = conf.shape[0]
    lines = ["true\\pred," + ",".join(str(j) for j in range(c))]
    for i in range(c):
        lines.append(f"{i}," + ",".join(str(int(v)) for v in conf[i]))
    return "\n".join(lines) + "\n"
