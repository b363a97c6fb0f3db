"""Evaluation metrics and the per-run metrics report.

The good outcome (score 0-2) is the positive class for F1 and AUC: with a
~25% positive base rate an all-majority predictor then shows the telltale
high-accuracy / zero-F1 signature, which is the failure mode these metrics
are meant to expose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, UndefinedMetricError

GOOD, BAD = 0, 1
POSITIVE_CLASS_TAG = "good(mrs0-2)"


def dichotomize(mrs: int) -> int:
    """Collapse a 0-6 outcome score: 0 (good) for 0-2, 1 (bad) for 3-6."""
    if not 0 <= mrs <= 6:
        raise ParameterError(f"outcome score must be in [0, 6], got {mrs}")
    return GOOD if mrs <= 2 else BAD


def dichotomize_array(mrs) -> np.ndarray:
    arr = np.asarray(mrs, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() > 6):
        raise ParameterError("outcome scores must be in [0, 6]")
    return (arr > 2).astype(np.int64)


def accuracy(pred, truth) -> float:
    p, t = np.asarray(pred), np.asarray(truth)
    if p.shape != t.shape or p.size == 0:
        raise ParameterError(f"need equal-length non-empty arrays, got {p.shape} vs {t.shape}")
    return float(np.mean(p == t))


def f1(pred, truth, positive_class: int = GOOD) -> float:
    """Harmonic mean of precision and recall on the positive class; 0 when
    there is nothing to average."""
    p, t = np.asarray(pred), np.asarray(truth)
    tp = int(np.sum((p == positive_class) & (t == positive_class)))
    fp = int(np.sum((p == positive_class) & (t != positive_class)))
    fn = int(np.sum((p != positive_class) & (t == positive_class)))
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2.0 * tp / denom


def recall(pred, truth, positive_class: int) -> float:
    p, t = np.asarray(pred), np.asarray(truth)
    pos = t == positive_class
    if not pos.any():
        raise UndefinedMetricError(f"no samples of class {positive_class} in truth")
    return float(np.mean(p[pos] == positive_class))


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their group average."""
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(len(s), dtype=np.float64)
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0
        i = j
    return ranks


def auc(scores, truth) -> float:
    """Rank AUC: P(score_pos > score_neg) + 0.5 * P(tie).

    `truth` marks positives with 1.  Equals the trapezoidal ROC area and the
    brute-force pair count exactly.
    """
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(truth).astype(bool)
    n_pos, n_neg = int(t.sum()), int((~t).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present in truth")
    ranks = _average_ranks(s)
    return float((ranks[t].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def one_nearest_accuracy(pred, truth) -> float:
    """Fraction of predictions within one outcome class of the truth."""
    p, t = np.asarray(pred, dtype=np.int64), np.asarray(truth, dtype=np.int64)
    if p.shape != t.shape or p.size == 0:
        raise ParameterError(f"need equal-length non-empty arrays, got {p.shape} vs {t.shape}")
    return float(np.mean(np.abs(p - t) <= 1))


def confusion_matrix(pred, truth, num_classes: int) -> np.ndarray:
    """Counts indexed [true class, predicted class]."""
    p, t = np.asarray(pred, dtype=np.int64), np.asarray(truth, dtype=np.int64)
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (t, p), 1)
    return m


@dataclass
class MetricsReport:
    """Metrics for one evaluation run; fields that do not apply stay None."""

    experiment: str
    mode: str
    accuracy: float
    f1: float | None = None
    auc: float | None = None
    one_nearest_accuracy: float | None = None
    confusion: np.ndarray | None = None
    n_samples: int = 0
    positive_class: str = POSITIVE_CLASS_TAG

    def to_text(self) -> str:
        lines = [
            f"experiment={self.experiment}",
            f"mode={self.mode}",
            f"n_samples={self.n_samples}",
            f"accuracy={self.accuracy!r}",
        ]
        if self.f1 is not None:
            lines.append(f"f1={self.f1!r}")
        if self.auc is not None:
            lines.append(f"auc={self.auc!r}")
            lines.append(f"positive_class={self.positive_class}")
        if self.one_nearest_accuracy is not None:
            lines.append(f"one_nearest_accuracy={self.one_nearest_accuracy!r}")
        if self.confusion is not None:
            lines.append("confusion=")
            for row in self.confusion:
                lines.append(",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        kv: dict[str, str] = {}
        rows: list[list[int]] = []
        in_matrix = False
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.strip() == "confusion=":
                in_matrix = True
                continue
            if in_matrix:
                rows.append([int(v) for v in line.split(",")])
            else:
                k, _, v = line.partition("=")
                kv[k] = v
        return cls(
            experiment=kv["experiment"],
            mode=kv["mode"],
            accuracy=float(kv["accuracy"]),
            f1=float(kv["f1"]) if "f1" in kv else None,
            auc=float(kv["auc"]) if "auc" in kv else None,
            one_nearest_accuracy=(float(kv["one_nearest_accuracy"])
                                  if "one_nearest_accuracy" in kv else None),
            confusion=np.array(rows, dtype=np.int64) if rows else None,
            n_samples=int(kv.get("n_samples", 0)),
            positive_class=kv.get("positive_class", POSITIVE_CLASS_TAG),
        )
