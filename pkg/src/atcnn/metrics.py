"""Confusion matrix, precision/recall/F1 aggregation, feature histograms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidLabelError, ShapeError


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # [C, C], rows = true class, columns = predicted
    class_names: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassMetrics:
    name: str
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: bool  # no support or no predictions; rates forced to 0


@dataclass(frozen=True)
class MetricsReport:
    per_class: tuple[ClassMetrics, ...]
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    micro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float


def confusion(pred_labels: Sequence[int], true_labels: Sequence[int], class_count: int,
              class_names: Optional[Sequence[str]] = None) -> ConfusionMatrix:
    pred = np.asarray(pred_labels, dtype=np.int64)
    true = np.asarray(true_labels, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ShapeError(f"label vectors must be equal-length 1-d, got "
                         f"{pred.shape} and {true.shape}")
    if pred.size and (pred.min() < 0 or pred.max() >= class_count
                      or true.min() < 0 or true.max() >= class_count):
        raise InvalidLabelError(f"labels must lie in [0, {class_count})")
    counts = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    if class_names is None:
        class_names = tuple(f"class{i}" for i in range(class_count))
    return ConfusionMatrix(counts=counts, class_names=tuple(class_names))


def _rate(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class and averaged rates.

    A class with zero support or zero predictions contributes 0 rates to the
    averages and is flagged `degenerate`. Micro rates pool TP/FP/FN counts,
    so for single-label data micro-F1 equals accuracy.
    """
    counts = cm.counts
    total = counts.sum()
    if total == 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(counts).astype(float)
    support = counts.sum(axis=1).astype(float)
    predicted = counts.sum(axis=0).astype(float)
    fp = predicted - tp
    fn = support - tp

    per_class = []
    for i, name in enumerate(cm.class_names):
        p = _rate(tp[i], tp[i] + fp[i])
        r = _rate(tp[i], tp[i] + fn[i])
        f1 = _rate(2.0 * p * r, p + r)
        per_class.append(ClassMetrics(
            name=name, precision=p, recall=r, f1=f1, support=int(support[i]),
            degenerate=(support[i] == 0 or predicted[i] == 0)))

    c = len(per_class)
    macro_p = sum(m.precision for m in per_class) / c
    macro_r = sum(m.recall for m in per_class) / c
    macro_f1 = sum(m.f1 for m in per_class) / c
    w = support / total
    weighted_p = float(sum(wi * m.precision for wi, m in zip(w, per_class)))
    weighted_r = float(sum(wi * m.recall for wi, m in zip(w, per_class)))
    weighted_f1 = float(sum(wi * m.f1 for wi, m in zip(w, per_class)))
    micro_p = _rate(tp.sum(), tp.sum() + fp.sum())
    micro_r = _rate(tp.sum(), tp.sum() + fn.sum())
    micro_f1 = _rate(2.0 * micro_p * micro_r, micro_p + micro_r)

    return MetricsReport(
        per_class=tuple(per_class),
        accuracy=float(tp.sum() / total),
        macro_precision=macro_p, macro_recall=macro_r, macro_f1=macro_f1,
        micro_precision=micro_p, micro_recall=micro_r, micro_f1=micro_f1,
        weighted_precision=weighted_p, weighted_recall=weighted_r, weighted_f1=weighted_f1,
    )


def format_metrics_table(report: MetricsReport) -> str:
    lines = ["class\tprecision\trecall\tf1\tsupport"]
    for m in report.per_class:
        flag = " (degenerate)" if m.degenerate else ""
        lines.append(f"{m.name}{flag}\t{m.precision:.4f}\t{m.recall:.4f}"
                     f"\t{m.f1:.4f}\t{m.support}")
    lines.append(f"accuracy\t\t\t{report.accuracy:.4f}\t")
    lines.append(f"macro\t{report.macro_precision:.4f}\t{report.macro_recall:.4f}"
                 f"\t{report.macro_f1:.4f}\t")
    lines.append(f"micro\t{report.micro_precision:.4f}\t{report.micro_recall:.4f}"
                 f"\t{report.micro_f1:.4f}\t")
    lines.append(f"weighted\t{report.weighted_precision:.4f}\t{report.weighted_recall:.4f}"
                 f"\t{report.weighted_f1:.4f}\t")
    return "\n".join(lines)


def format_metrics_kv(report: MetricsReport) -> str:
    lines = []
    for m in report.per_class:
        for key, val in (("precision", m.precision), ("recall", m.recall), ("f1", m.f1)):
            lines.append(f"{m.name}.{key}={val:.10f}")
        lines.append(f"{m.name}.support={m.support}")
    lines.append(f"accuracy={report.accuracy:.10f}")
    for avg in ("macro", "micro", "weighted"):
        for key in ("precision", "recall", "f1"):
            lines.append(f"{avg}.{key}={getattr(report, f'{avg}_{key}'):.10f}")
    return "\n".join(lines)


def format_confusion(cm: ConfusionMatrix) -> str:
    header = "true\\pred\t" + "\t".join(cm.class_names)
    lines = [header]
    for i, name in enumerate(cm.class_names):
        lines.append(name + "\t" + "\t".join(str(int(v)) for v in cm.counts[i]))
    return "\n".join(lines)


@dataclass(frozen=True)
class FeatureHistogram:
    feature: int
    edges: np.ndarray  # length bins+1, or length 2 for a degenerate constant feature
    class_counts: np.ndarray  # [C, bins]


def feature_histograms(features: np.ndarray, labels: Sequence[int],
                       bins: int = 20) -> list[FeatureHistogram]:
    """Per-feature, per-class histograms over shared global-range bin edges.

    A constant feature collapses to a single bin holding every sample.
    """
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ShapeError(f"features [samples, F] and labels [samples] required, got "
                         f"{features.shape} and {labels.shape}")
    class_count = int(labels.max()) + 1 if labels.size else 0
    out = []
    for f in range(features.shape[1]):
        col = features[:, f]
        lo, hi = float(col.min()), float(col.max())
        if lo == hi:
            edges = np.array([lo, hi])
            counts = np.zeros((class_count, 1), dtype=np.int64)
            for c in range(class_count):
                counts[c, 0] = int((labels == c).sum())
        else:
            edges = np.linspace(lo, hi, bins + 1)
            counts = np.zeros((class_count, bins), dtype=np.int64)
            for c in range(class_count):
                counts[c], _ = np.histogram(col[labels == c], bins=edges)
        out.append(FeatureHistogram(feature=f, edges=edges, class_counts=counts))
    return out


def format_histogram_table(hists: list[FeatureHistogram],
                           class_names: Sequence[str]) -> str:
    lines = ["feature\tclass\tbin_lo\tbin_hi\tcount"]
    for h in hists:
        for c, name in enumerate(class_names):
            for b in range(h.class_counts.shape[1]):
                lines.append(f"{h.feature}\t{name}\t{h.edges[b]:.6g}"
                             f"\t{h.edges[b + 1]:.6g}\t{h.class_counts[c, b]}")
    return "\n".join(lines)
