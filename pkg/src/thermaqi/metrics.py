"""Classification metrics over the five AQI classes.

Weighted F1 follows the support-weighted mean of per-class F1 scores;
classes absent from the truth are excluded. One-vs-rest AUC uses the
rank (Mann-Whitney) formulation with midrank tie handling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

N_CLASSES = 5
CLASSES = tuple(range(1, N_CLASSES + 1))


def _as_labels(y: Sequence[int]) -> np.ndarray:
    arr = np.asarray(y, dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError("labels must be 1-D")
    if arr.size and (arr.min() < 1 or arr.max() > N_CLASSES):
        raise ValueError("labels must be AQI classes in 1..5")
    return arr


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int]) -> np.ndarray:
    """5x5 counts; rows are true classes 1..5, columns predicted."""
    t, p = _as_labels(y_true), _as_labels(y_pred)
    if t.shape != p.shape:
        raise ValueError("y_true and y_pred must have equal length")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (t - 1, p - 1), 1)
    return cm


def per_class_stats(y_true: Sequence[int], y_pred: Sequence[int]) -> dict[int, dict[str, float]]:
    """Precision, recall, F1, and support per class; F1 is 0 whenever
    precision + recall is 0."""
    cm = confusion_matrix(y_true, y_pred)
    stats = {}
    for c in CLASSES:
        tp = cm[c - 1, c - 1]
        support = int(cm[c - 1].sum())
        predicted = int(cm[:, c - 1].sum())
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        stats[c] = {
            "precision": float(precision),
            "recall": float(recall),
            "f1": float(f1),
            "support": support,
        }
    return stats


def weighted_f1(y_true: Sequence[int], y_pred: Sequence[int]) -> float:
    """Support-weighted mean of per-class F1; zero-support classes excluded."""
    t = _as_labels(y_true)
    p = _as_labels(y_pred)
    if t.shape != p.shape:
        raise ValueError("y_true and y_pred must have equal length")
    if t.size == 0:
        raise ValueError("need at least one label")
    stats = per_class_stats(t, p)
    n = t.size
    return float(sum(s["support"] * s["f1"] for s in stats.values() if s["support"] > 0) / n)


def _midranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties replaced by the group mean rank."""
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    starts = np.cumsum(counts) - counts
    return (starts + (counts + 1) / 2.0)[inverse]


def roc_auc_ovr(y_true: Sequence[int], probabilities: np.ndarray) -> dict[int, Optional[float]]:
    """One-vs-rest AUC per class via the Mann-Whitney rank statistic.

    Classes absent from y_true (or covering all of it) have no defined AUC
    and map to None.
    """
    t = _as_labels(y_true)
    probs = np.asarray(probabilities, dtype=np.float64)
    if probs.shape != (t.size, N_CLASSES):
        raise ValueError(f"probabilities must be (n, {N_CLASSES}), got {probs.shape}")
    out: dict[int, Optional[float]] = {}
    for c in CLASSES:
        pos = t == c
        n_pos = int(pos.sum())
        n_neg = t.size - n_pos
        if n_pos == 0 or n_neg == 0:
            out[c] = None
            continue
        ranks = _midranks(probs[:, c - 1])
        out[c] = float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
    return out


def severity_report(
    y_true: Sequence[int], y_pred: Sequence[int]
) -> dict[int, dict[str, object]]:
    """Per true class: the normalized histogram of predicted classes and
    the mean ordinal distance |pred - true|."""
    t, p = _as_labels(y_true), _as_labels(y_pred)
    if t.shape != p.shape or t.size == 0:
        raise ValueError("need equal-length nonempty label vectors")
    report = {}
    for c in CLASSES:
        mask = t == c
        n = int(mask.sum())
        if n == 0:
            continue
        preds = p[mask]
        hist = {int(k): int(v) / n for k, v in zip(*np.unique(preds, return_counts=True))}
        report[c] = {
            "distribution": hist,
            "ordinal_distance": float(np.abs(preds - c).mean()),
        }
    return report


@dataclass
class EvalReport:
    """Everything one protocol run reports for one test device."""

    protocol: str
    model_kind: str
    test_device: str
    train_devices: list[str]
    weighted_f1: float
    per_class: dict[int, dict[str, float]]
    confusion: list[list[int]]
    auc: dict[int, Optional[float]]
    severity: dict[int, dict[str, object]]
    n_instances: int
    metadata: dict = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        protocol: str,
        model_kind: str,
        test_device: str,
        train_devices: Sequence[str],
        y_true: Sequence[int],
        y_pred: Sequence[int],
        probabilities: np.ndarray,
        metadata: Optional[dict] = None,
    ) -> "EvalReport":
        return cls(
            protocol=protocol,
            model_kind=model_kind,
            test_device=test_device,
            train_devices=sorted(train_devices),
            weighted_f1=weighted_f1(y_true, y_pred),
            per_class=per_class_stats(y_true, y_pred),
            confusion=confusion_matrix(y_true, y_pred).tolist(),
            auc=roc_auc_ovr(y_true, probabilities),
            severity=severity_report(y_true, y_pred),
            n_instances=len(list(y_true)),
            metadata=dict(metadata or {}),
        )

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "model_kind": self.model_kind,
            "test_device": self.test_device,
            "train_devices": self.train_devices,
            "weighted_f1": self.weighted_f1,
            "per_class": {str(c): s for c, s in self.per_class.items()},
            "confusion": self.confusion,
            "auc": {str(c): a for c, a in self.auc.items()},
            "severity": {str(c): s for c, s in self.severity.items()},
            "n_instances": self.n_instances,
            "metadata": self.metadata,
        }
