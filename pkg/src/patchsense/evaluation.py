"""Classification metrics, ROC/AUC, false-positive reclassification and scanning."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .domain import EventWindow
from .features import to_arrays
from .nn import LayerGraph, ShapeError


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionMatrix:
    """A window is predicted positive when its score is >= threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if scores.size == 0:
        raise ValueError("empty input")
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def metrics(cm: ConfusionMatrix) -> Metrics:
    if cm.total == 0:
        raise ValueError("confusion matrix is empty")
    accuracy = (cm.tp + cm.tn) / cm.total
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else 0.0
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(accuracy, precision, recall, f1)


def adjust_for_reclassified_fp(cm: ConfusionMatrix, reclassified: int) -> ConfusionMatrix:
    """Move ``reclassified`` false positives (audited as real patches) to true positives."""
    if not 0 <= reclassified <= cm.fp:
        raise ValueError(f"reclassified count {reclassified} outside [0, {cm.fp}]")
    return replace(cm, tp=cm.tp + reclassified, fp=cm.fp - reclassified)


def estimate_reclassification(sample_size: int, confirmed: int, fp_total: int) -> tuple[float, int]:
    """Audit rate in a false-positive sample, projected onto all false positives."""
    if sample_size <= 0:
        raise ValueError("sample size must be positive")
    if not 0 <= confirmed <= sample_size <= fp_total:
        raise ValueError("need 0 <= confirmed <= sample size <= false-positive total")
    rate = confirmed / sample_size
    return rate, int(math.floor(rate * fp_total + 0.5))


@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    threshold: float


def roc_auc(scores, labels) -> tuple[list[RocPoint], float]:
    """ROC points at every distinct score (plus +/-inf) and trapezoidal AUC.

    Tied scores move together, so a tie contributes a diagonal segment worth
    half credit, which matches the pairwise ranking probability exactly.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.size == 0:
        raise ValueError("scores and labels must be non-empty and equal length")
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], pos[order]
    tps = np.cumsum(p)
    fps = np.cumsum(~p)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp_pts = np.r_[0, tps[ends]].astype(np.int64)
    fp_pts = np.r_[0, fps[ends]].astype(np.int64)
    thresholds = np.r_[np.inf, s[ends]]
    points = [RocPoint(fp / n_neg, tp / n_pos, float(t)) for fp, tp, t in zip(fp_pts, tp_pts, thresholds)]
    points.append(RocPoint(1.0, 1.0, -math.inf))
    # exact integer trapezoid area, one division at the end
    twice_area = int(np.sum(np.diff(fp_pts) * (tp_pts[1:] + tp_pts[:-1])))
    return points, twice_area / (2 * n_pos * n_neg)


def pairwise_auc(scores, labels) -> float:
    """Brute-force ranking probability P(score_pos > score_neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    sp, sn = scores[labels == 1], scores[labels != 1]
    wins = 0.0
    for a in sp:
        for b in sn:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(sp) * len(sn))


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: Optional[float]
    confusion: ConfusionMatrix
    roc: list = field(default_factory=list, repr=False)
    threshold: float = 0.5
    adjusted: Optional["MetricsReport"] = None
    reclassified: Optional[int] = None

    def to_dict(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
            "threshold": self.threshold,
            "confusion": self.confusion.to_dict(),
            "roc_points": len(self.roc),
        }
        if self.adjusted is not None:
            out["adjusted"] = self.adjusted.to_dict()
            out["adjusted"]["reclassified_fp"] = self.reclassified
        return out


def report_from_confusion(cm: ConfusionMatrix, auc: Optional[float] = None, threshold: float = 0.5) -> MetricsReport:
    m = metrics(cm)
    return MetricsReport(m.accuracy, m.precision, m.recall, m.f1, auc, cm, threshold=threshold)


def evaluate_scores(
    scores, labels, threshold: float = 0.5, fp_reclass_rate: Optional[float] = None
) -> MetricsReport:
    cm = confusion(scores, labels, threshold)
    labels = np.asarray(labels)
    roc, auc = ([], None)
    if 0 < int(np.sum(labels == 1)) < labels.size:
        roc, auc = roc_auc(scores, labels)
    report = report_from_confusion(cm, auc, threshold)
    report.roc = roc
    if fp_reclass_rate is not None:
        if not 0.0 <= fp_reclass_rate <= 1.0:
            raise ValueError("reclassification rate must be within [0, 1]")
        r = int(math.floor(fp_reclass_rate * cm.fp + 0.5))
        report.adjusted = report_from_confusion(adjust_for_reclassified_fp(cm, r), None, threshold)
        report.reclassified = r
    return report


def roc_csv(points: Sequence[RocPoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "fpr", "tpr"])
    for pt in points:
        writer.writerow([repr(pt.threshold), repr(pt.fpr), repr(pt.tpr)])
    return buf.getvalue()


def scan(graph: LayerGraph, windows: Sequence[EventWindow], threshold: float = 0.5) -> list[dict]:
    """Score windows that are unlabeled or labeled negative; keep those >= threshold.

    Sorted by score descending, then repository and commit for stable output.
    """
    candidates = [w for w in windows if w.label != 1]
    if not candidates:
        return []
    x, _ = to_arrays(candidates)
    if tuple(x.shape[1:]) != graph.input_shape:
        raise ShapeError(f"windows have shape {tuple(x.shape[1:])}, checkpoint expects {graph.input_shape}")
    scores = graph.predict(x)
    hits = [
        {"repo_id": w.repo_id, "center_sha": w.center_sha, "score": float(s)}
        for w, s in zip(candidates, scores)
        if s >= threshold
    ]
    hits.sort(key=lambda h: (-h["score"], h["repo_id"], h["center_sha"]))
    return hits


def suspects_jsonl(hits: Sequence[dict]) -> str:
    return "".join(json.dumps(h, sort_keys=True) + "\n" for h in hits)
