"""Binary classification metrics with cancer (label 1) as the positive class."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def flipped(self) -> "ConfusionMatrix":
        """Same counts with class 0 treated as positive."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, tn=self.tp, fn=self.fp)


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    fpr: float
    tpr: float


def _labels(y, name="y_true") -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if y.size and not np.all(np.isin(y, (0, 1))):
        raise ValueError(f"{name} must contain only 0 and 1")
    return y.astype(np.int64)


def confusion_matrix(y_true, y_pred) -> ConfusionMatrix:
    t, p = _labels(y_true), _labels(y_pred, "y_pred")
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.size} labels vs {p.size} predictions")
    return ConfusionMatrix(tp=int(np.sum((t == 1) & (p == 1))), fp=int(np.sum((t == 0) & (p == 1))),
                           tn=int(np.sum((t == 0) & (p == 0))), fn=int(np.sum((t == 1) & (p == 0))))


def _ratio(num: int, den: int) -> float:
    # zero denominator -> 0 by convention
    return num / den if den else 0.0


def accuracy(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp + cm.tn, cm.total)


def precision(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fp)


def recall(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fn)


def f1(cm: ConfusionMatrix) -> float:
    p, r = precision(cm), recall(cm)
    return 2 * p * r / (p + r) if p + r else 0.0


def _check_scores(y_true, scores):
    t = _labels(y_true)
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != t.shape:
        raise ValueError(f"length mismatch: {t.size} labels vs {s.size} scores")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    n_pos = int(t.sum())
    if n_pos == 0 or n_pos == t.size:
        raise ValueError("ROC needs at least one sample of each class")
    return t, s


def _roc_counts(t, s):
    """Cumulative (fp, tp) counts at each distinct score, highest first."""
    order = np.argsort(-s, kind="stable")
    s, t = s[order], t[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tps = np.cumsum(t)[last]
    fps = (last + 1) - tps
    return s[last], fps, tps


def roc_curve(y_true, scores) -> list:
    """ROC points by descending threshold, starting at (0, 0) with threshold +inf.

    A sample is predicted positive when its score >= threshold, so tied
    scores enter the curve together.
    """
    t, s = _check_scores(y_true, scores)
    thr, fps, tps = _roc_counts(t, s)
    n_pos, n_neg = int(t.sum()), int(t.size - t.sum())
    pts = [RocPoint(float("inf"), 0.0, 0.0)]
    pts += [RocPoint(float(th), float(fp / n_neg), float(tp / n_pos)) for th, fp, tp in zip(thr, fps, tps)]
    return pts


def roc_auc(y_true, scores) -> float:
    """Trapezoidal area under :func:`roc_curve`, accumulated in exact integers."""
    t, s = _check_scores(y_true, scores)
    _, fps, tps = _roc_counts(t, s)
    fps = np.r_[0, fps].astype(np.int64)
    tps = np.r_[0, tps].astype(np.int64)
    # twice the area in units of (1 / n_neg) x (1 / n_pos) cells
    twice_area = int(np.sum(np.diff(fps) * (tps[1:] + tps[:-1])))
    n_pos, n_neg = int(t.sum()), int(t.size - t.sum())
    return float(Fraction(twice_area, 2 * n_pos * n_neg))


def mann_whitney_auc(y_true, scores) -> float:
    """P(score_pos > score_neg) + P(tie) / 2 over all positive/negative pairs."""
    t, s = _check_scores(y_true, scores)
    pos, neg = s[t == 1], s[t == 0]
    wins = int(np.sum(pos[:, None] > neg[None, :]))
    ties = int(np.sum(pos[:, None] == neg[None, :]))
    return float(Fraction(2 * wins + ties, 2 * pos.size * neg.size))


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    confusion: ConfusionMatrix
    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: float
    per_class: dict = field(default_factory=dict)
    class_names: tuple = ("NonCancer", "Cancer")
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_names"] = list(self.class_names)
        d["per_class"] = {str(k): asdict(v) if isinstance(v, ClassMetrics) else v
                          for k, v in self.per_class.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(ConfusionMatrix(**d["confusion"]), d["accuracy"], d["precision"], d["recall"],
                   d["f1"], d["roc_auc"], {k: ClassMetrics(**v) for k, v in d["per_class"].items()},
                   tuple(d["class_names"]), list(d.get("warnings", [])))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _degenerate(cm: ConfusionMatrix, label: str) -> list:
    out = []
    if cm.tp + cm.fp == 0:
        out.append(f"{label}: no positive predictions, precision set to 0")
    if cm.tp + cm.fn == 0:
        out.append(f"{label}: no positive samples, recall set to 0")
    if precision(cm) + recall(cm) == 0 and cm.total:
        out.append(f"{label}: precision + recall == 0, f1 set to 0")
    return out


def classification_report(y_true, y_pred, scores, class_names=("NonCancer", "Cancer")) -> MetricsReport:
    """All metrics for one model; ``scores`` are positive-class probabilities."""
    cm = confusion_matrix(y_true, y_pred)
    per_class, warns = {}, []
    for c, m in ((0, cm.flipped()), (1, cm)):
        per_class[class_names[c]] = ClassMetrics(precision(m), recall(m), f1(m), m.tp + m.fn)
        warns += _degenerate(m, class_names[c])
    return MetricsReport(cm, accuracy(cm), precision(cm), recall(cm), f1(cm), roc_auc(y_true, scores),
                         per_class, tuple(class_names), warns)


def roc_to_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "fpr", "tpr"])
    for p in points:
        w.writerow([repr(float(p.threshold)), repr(float(p.fpr)), repr(float(p.tpr))])
    return buf.getvalue()


def write_roc_csv(path, points) -> None:
    Path(path).write_text(roc_to_csv(points), encoding="utf-8")
