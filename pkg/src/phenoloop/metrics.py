"""Binary-classification metrics: thresholded confusion metrics plus
rank-based AUC-ROC (Mann-Whitney) and AUC-PR (average precision with tie
blocks), and the Table-style evaluation report for the gold subset."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MetricError",
    "MetricsReport",
    "EvaluationReport",
    "confusion_metrics",
    "auc_roc",
    "auc_pr",
    "full_metrics",
    "gold_report",
]


class MetricError(ValueError):
    """Metric undefined for this input (single class, shape mismatch)."""


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    specificity: float
    tp: int
    fp: int
    fn: int
    tn: int
    auc_roc: float | None = None
    auc_pr: float | None = None
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "specificity": self.specificity,
            "auc_pr": self.auc_pr,
            "auc_roc": self.auc_roc,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "notes": list(self.notes),
        }


def _check_vectors(y_true, scores) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=float)
    if y.ndim != 1 or s.shape != y.shape:
        raise MetricError("y_true and scores must be aligned 1-d vectors")
    if y.size == 0:
        raise MetricError("empty input")
    return y, s


def confusion_metrics(y_true, scores, threshold: float = 0.5) -> MetricsReport:
    """Threshold metrics with score >= threshold counting as positive.
    Zero-denominator precision/F1 report 0 with an explanatory note."""
    y, s = _check_vectors(y_true, scores)
    pred = s >= threshold
    tp = int((pred & y).sum())
    fp = int((pred & ~y).sum())
    fn = int((~pred & y).sum())
    tn = int((~pred & ~y).sum())
    notes = []
    if tp + fp == 0:
        precision = 0.0
        notes.append("precision undefined (no predicted positives); reported as 0")
    else:
        precision = tp / (tp + fp)
    recall = tp / (tp + fn) if tp + fn else 0.0
    specificity = tn / (tn + fp) if tn + fp else 0.0
    if precision + recall == 0:
        f1 = 0.0
        notes.append("f1 undefined (precision + recall = 0); reported as 0")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        specificity=specificity,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        notes=tuple(notes),
    )


def auc_roc(y_true, scores) -> float:
    """Mann-Whitney statistic: over all (positive, negative) pairs, credit 1
    when the positive outranks the negative and 0.5 on ties."""
    y, s = _check_vectors(y_true, scores)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("auc_roc undefined: both classes must be present")
    order = np.argsort(s, kind="stable")
    sorted_scores = s[order]
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # 1-based average rank
        i = j + 1
    rank_sum_pos = ranks[y].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_pr(y_true, scores) -> float:
    """Average precision: sum over descending-score cut points of
    (recall step) x (precision at the cut), processing tied scores as one
    block."""
    y, s = _check_vectors(y_true, scores)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("auc_pr undefined: no positive examples")
    order = np.argsort(-s, kind="stable")
    ys = y[order]
    ss = s[order]
    ap = 0.0
    tp = 0
    seen = 0
    i = 0
    while i < len(ss):
        j = i
        while j + 1 < len(ss) and ss[j + 1] == ss[i]:
            j += 1
        block_tp = int(ys[i : j + 1].sum())
        tp += block_tp
        seen += j - i + 1
        if block_tp:
            ap += (block_tp / n_pos) * (tp / seen)
        i = j + 1
    return float(ap)


def full_metrics(y_true, scores, threshold: float = 0.5) -> MetricsReport:
    """Confusion metrics plus both AUCs in one report."""
    base = confusion_metrics(y_true, scores, threshold)
    return MetricsReport(
        precision=base.precision,
        recall=base.recall,
        f1=base.f1,
        specificity=base.specificity,
        tp=base.tp,
        fp=base.fp,
        fn=base.fn,
        tn=base.tn,
        auc_roc=auc_roc(y_true, scores),
        auc_pr=auc_pr(y_true, scores),
        notes=base.notes,
    )


@dataclass
class EvaluationReport:
    """Method-by-metrics table for the gold testing subset, mirroring the
    familiar layout (one row per method; AUC columns N/A for discrete rules)."""

    disease: str
    rows: dict[str, MetricsReport] = field(default_factory=dict)

    def add(self, method: str, report: MetricsReport) -> None:
        self.rows[method] = report

    def to_dict(self) -> dict:
        return {"disease": self.disease, "rows": {m: r.to_dict() for m, r in self.rows.items()}}

    def to_text(self) -> str:
        cols = ["Precision", "Recall", "F1", "Specificity", "AUC-PR", "AUC-ROC"]
        width = max([len(m) for m in self.rows] + [8])
        lines = [f"Disease: {self.disease}"]
        lines.append("  ".join(["Method".ljust(width)] + [c.rjust(11) for c in cols]))

        def fmt(v: float | None) -> str:
            return "N/A".rjust(11) if v is None else f"{v:.3f}".rjust(11)

        for method, r in self.rows.items():
            cells = [r.precision, r.recall, r.f1, r.specificity, r.auc_pr, r.auc_roc]
            lines.append("  ".join([method.ljust(width)] + [fmt(v) for v in cells]))
        return "\n".join(lines)


def gold_report(
    disease: str,
    y_true,
    classifier_scores,
    icd_verdict_positive,
    extra_rows: dict[str, np.ndarray] | None = None,
    threshold: float = 0.5,
) -> EvaluationReport:
    """Evaluate the workflow classifier against the ICD rule baseline on the
    gold-labeled subset. The ICD row uses the discrete rule verdicts as
    predictions, so its AUC columns are not applicable."""
    report = EvaluationReport(disease)
    icd_scores = np.asarray(icd_verdict_positive).astype(float)
    report.add("ICD Codes", confusion_metrics(y_true, icd_scores, threshold))
    for method, scores in (extra_rows or {}).items():
        report.add(method, full_metrics(y_true, scores, threshold))
    report.add("Workflow", full_metrics(y_true, classifier_scores, threshold))
    return report
