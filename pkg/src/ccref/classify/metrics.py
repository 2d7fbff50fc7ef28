"""Evaluation metrics: weighted F1, per-class scores, confusion matrix, ROC."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np


def confusion_matrix(y_true: Sequence, y_pred: Sequence, classes: Sequence | None = None) -> tuple[list, np.ndarray]:
    """Rows are true classes, columns predicted classes."""
    if len(y_true) != len(y_pred):
        raise ValueError("y_true and y_pred differ in length")
    if classes is None:
        classes = sorted(set(y_true) | set(y_pred))
    pos = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=int)
    for t, p in zip(y_true, y_pred):
        cm[pos[t], pos[p]] += 1
    return list(classes), cm


def per_class_scores(y_true: Sequence, y_pred: Sequence, classes: Sequence | None = None) -> dict:
    """``{class: (precision, recall, f1, support)}``; any 0/0 ratio is taken as 0."""
    classes, cm = confusion_matrix(y_true, y_pred, classes)
    out = {}
    for i, c in enumerate(classes):
        tp = cm[i, i]
        pred = cm[:, i].sum()
        sup = cm[i, :].sum()
        prec = tp / pred if pred else 0.0
        rec = tp / sup if sup else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out[c] = (float(prec), float(rec), float(f1), int(sup))
    return out


def weighted_f1(y_true: Sequence, y_pred: Sequence) -> float:
    if len(y_true) != len(y_pred):
        raise ValueError("y_true and y_pred differ in length")
    if not y_true:
        raise ValueError("empty label lists")
    n = len(y_true)
    return float(sum(sup / n * f1 for _, _, f1, sup in per_class_scores(y_true, y_pred).values()))


def roc_curve(y_true: Sequence, scores: Sequence[float], positive: Hashable | None = None):
    """ROC points and trapezoidal area.

    Thresholds sweep the distinct scores from high to low; equal scores move
    together in one step. ``positive`` defaults to the larger class label.
    """
    labels = sorted(set(y_true))
    if len(labels) != 2:
        raise ValueError("ROC needs exactly two classes in y_true")
    if len(y_true) != len(scores):
        raise ValueError("y_true and scores differ in length")
    pos_label = labels[1] if positive is None else positive
    y = np.array([t == pos_label for t in y_true])
    s = np.asarray(scores, dtype=float)
    P, N = int(y.sum()), int((~y).sum())
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        tp += int(y[i:j].sum())
        fp += int((~y[i:j]).sum())
        points.append((fp / N, tp / P))
        i = j
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return points, float(area)


def random_baseline(labels: Sequence, seed: int = 0, size: int | None = None) -> list:
    """I.i.d. draws from the empirical class distribution of ``labels``."""
    if not labels:
        raise ValueError("random baseline needs at least one label")
    classes = sorted(set(labels))
    counts = np.array([sum(1 for l in labels if l == c) for c in classes], dtype=float)
    rng = np.random.default_rng(seed)
    draws = rng.choice(len(classes), size=len(labels) if size is None else size, p=counts / counts.sum())
    return [classes[i] for i in draws]


@dataclass
class EvalReport:
    taxonomy: str
    weighted_f1: float
    per_class: dict
    classes: list
    confusion: list
    roc_points: list | None = None
    roc_auc: float | None = None
    threshold: float = 0.5
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "taxonomy": self.taxonomy,
            "weighted_f1": self.weighted_f1,
            "per_class": {c: {"precision": p, "recall": r, "f1": f, "support": s}
                          for c, (p, r, f, s) in self.per_class.items()},
            "classes": self.classes,
            "confusion_matrix": self.confusion,
            "roc": None if self.roc_points is None else {"points": self.roc_points, "auc": self.roc_auc},
            "threshold": self.threshold,
            **self.extra,
        }


def evaluate(y_true: Sequence, y_pred: Sequence, taxonomy: str, scores: Sequence[float] | None = None,
             positive=None, classes: Sequence | None = None, threshold: float = 0.5) -> EvalReport:
    classes = sorted(set(y_true) | set(y_pred) | set(classes or ()))
    _, cm = confusion_matrix(y_true, y_pred, classes)
    points = auc = None
    if scores is not None and len(set(y_true)) == 2:
        pts, auc = roc_curve(y_true, scores, positive)
        points = [list(p) for p in pts]
    return EvalReport(taxonomy, weighted_f1(y_true, y_pred), per_class_scores(y_true, y_pred, classes),
                      classes, cm.tolist(), points, auc, threshold)
