"""Confusion matrices, threshold metrics and ROC analysis.

Metrics are always computed from pooled counts: fold matrices are summed
first, never averaged afterwards.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateLabels, EmptyMatrix, InfeasibleRates, ShapeMismatch

METRIC_ORDER = ("sensitivity", "specificity", "precision", "f1", "auc", "accuracy")
METRIC_HEADERS = {
    "sensitivity": "Sensitivity",
    "specificity": "Specificity",
    "precision": "Precision",
    "f1": "F1-Score",
    "auc": "AUC",
    "accuracy": "Accuracy",
}
BINARY_CLASS_NAMES = ("control", "positive")
MULTICLASS_NAMES = ("control", "stroke", "tia")


@dataclass
class PredictionRecord:
    unit_id: str
    fold: int
    true_label: int
    scores: tuple

    def __post_init__(self):
        self.scores = tuple(float(s) for s in self.scores)
        if abs(sum(self.scores) - 1.0) > 1e-6:
            raise ValueError(f"scores for {self.unit_id} do not sum to 1: {self.scores}")


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes. For K=2, class 1 is positive."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ShapeMismatch("confusion matrix must be square")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_counts(cls, tp: int, fn: int, fp: int, tn: int) -> "ConfusionMatrix":
        return cls(np.array([[tn, fp], [fn, tp]]))

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def _binary(self):
        if self.k != 2:
            raise ShapeMismatch("TP/FN/FP/TN are defined for 2x2 matrices; use one_vs_rest")

    @property
    def tp(self) -> int:
        self._binary()
        return int(self.counts[1, 1])

    @property
    def fn(self) -> int:
        self._binary()
        return int(self.counts[1, 0])

    @property
    def fp(self) -> int:
        self._binary()
        return int(self.counts[0, 1])

    @property
    def tn(self) -> int:
        self._binary()
        return int(self.counts[0, 0])

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.counts.shape != other.counts.shape:
            raise ShapeMismatch(f"cannot add {self.counts.shape} and {other.counts.shape} matrices")
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


@dataclass
class MetricReport:
    sensitivity: float
    specificity: float
    precision: float
    f1: float
    accuracy: float
    auc: float | None = None
    cutoff: float = 0.5
    scope: str = "overall"
    degenerate: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {name: getattr(self, name) for name in METRIC_ORDER}
        d["cutoff"] = self.cutoff
        d["degenerate"] = list(self.degenerate)
        return d


@dataclass
class ROCCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


# -- confusion matrices -----------------------------------------------------------------


def confusion_binary(preds: Iterable[PredictionRecord], cutoff: float = 0.5) -> ConfusionMatrix:
    """Positive predicted iff the positive-class score is >= cutoff."""
    counts = np.zeros((2, 2), dtype=np.int64)
    for p in preds:
        if len(p.scores) != 2:
            raise ShapeMismatch("confusion_binary needs two-class score vectors")
        counts[int(p.true_label), int(p.scores[1] >= cutoff)] += 1
    return ConfusionMatrix(counts)


def confusion_multiclass(preds: Iterable[PredictionRecord], num_classes: int | None = None) -> ConfusionMatrix:
    """Argmax assignment; ties go to the lowest class index."""
    preds = list(preds)
    k = num_classes or (len(preds[0].scores) if preds else 3)
    counts = np.zeros((k, k), dtype=np.int64)
    for p in preds:
        if len(p.scores) != k:
            raise ShapeMismatch(f"expected {k} scores, got {len(p.scores)}")
        counts[int(p.true_label), int(np.argmax(p.scores))] += 1
    return ConfusionMatrix(counts)


def one_vs_rest(cm: ConfusionMatrix, c: int) -> ConfusionMatrix:
    m = cm.counts
    tp = int(m[c, c])
    fn = int(m[c].sum()) - tp
    fp = int(m[:, c].sum()) - tp
    tn = int(m.sum()) - tp - fn - fp
    return ConfusionMatrix.from_counts(tp, fn, fp, tn)


def accumulate(cms: Sequence[ConfusionMatrix]) -> ConfusionMatrix:
    cms = list(cms)
    if not cms:
        raise ValueError("nothing to accumulate")
    out = ConfusionMatrix(cms[0].counts.copy())
    for cm in cms[1:]:
        out = out + cm
    return out


# -- scalar metrics -----------------------------------------------------------------


def _ratio(num, den, name, flags):
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def metrics_from_cm(cm: ConfusionMatrix, cutoff: float = 0.5, scope: str = "overall") -> MetricReport:
    """Sensitivity, specificity, precision, F1 and accuracy of a binary matrix.

    A zero denominator yields 0 and the metric's name is recorded in
    ``degenerate``.
    """
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix has no entries")
    tp, fn, fp, tn = cm.tp, cm.fn, cm.fp, cm.tn
    flags: list[str] = []
    sens = _ratio(tp, tp + fn, "sensitivity", flags)
    spec = _ratio(tn, tn + fp, "specificity", flags)
    prec = _ratio(tp, tp + fp, "precision", flags)
    f1 = _ratio(2 * prec * sens, prec + sens, "f1", flags)
    acc = (tp + tn) / cm.total
    return MetricReport(sens, spec, prec, f1, acc, None, cutoff, scope, flags)


# -- ROC -----------------------------------------------------------------


def roc_curve(scores: Sequence[float], is_positive: Sequence[bool]) -> ROCCurve:
    """Sweep every distinct score as a threshold (predict positive iff score >= t).

    Tied scores move the curve diagonally, so the trapezoidal area equals
    the probability that a random positive outscores a random negative with
    ties counted as one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(is_positive, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = int(pos.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("ROC needs at least one positive and one negative unit")
    order = np.argsort(-scores, kind="stable")
    s, p = scores[order], pos[order]
    tp_cum = np.cumsum(p)
    fp_cum = np.cumsum(~p)
    # last index of each run of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.r_[0, tp_cum[ends]].astype(np.int64)
    fp = np.r_[0, fp_cum[ends]].astype(np.int64)
    # integer trapezoids, one division at the end
    twice_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    auc = twice_area / (2 * n_pos * n_neg)
    thresholds = np.r_[np.inf, s[ends]]
    return ROCCurve(fp / n_neg, tp / n_pos, thresholds, auc)


def roc_auc(preds: Sequence[PredictionRecord], positive: int = 1) -> ROCCurve:
    """ROC of one class against the rest, scored by that class's probability."""
    scores = [p.scores[positive] for p in preds]
    labels = [p.true_label == positive for p in preds]
    return roc_curve(scores, labels)


# -- published-table consistency -----------------------------------------------------------------


@dataclass
class Reconstruction:
    cm: ConfusionMatrix
    feasible: bool
    ambiguous: bool


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def reconstruct_confusion(sensitivity: float, specificity: float, n_pos: int, n_neg: int,
                          tol: float = 0.0005, strict: bool = False) -> Reconstruction:
    """Integer 2x2 matrix implied by rounded sensitivity/specificity and class sizes.

    ``feasible`` says whether the nearest integer counts reproduce both rates
    within ``tol``; ``ambiguous`` flags a count that fell exactly halfway
    between two integers. With ``strict=True`` an infeasible pair raises
    :class:`InfeasibleRates`.
    """
    if not (0 <= sensitivity <= 1 and 0 <= specificity <= 1):
        raise ValueError("rates must lie in [0, 1]")
    if n_pos <= 0 or n_neg <= 0:
        raise ValueError("class sizes must be positive")
    x_tp = sensitivity * n_pos
    x_tn = specificity * n_neg
    tp = _round_half_up(x_tp)
    tn = _round_half_up(x_tn)
    ambiguous = any(abs(x - math.floor(x) - 0.5) < 1e-9 for x in (x_tp, x_tn))
    feasible = abs(tp / n_pos - sensitivity) <= tol + 1e-12 and abs(tn / n_neg - specificity) <= tol + 1e-12
    if strict and not feasible:
        raise InfeasibleRates(
            f"no integer matrix gives sensitivity {sensitivity} and specificity {specificity} "
            f"with {n_pos} positives and {n_neg} negatives (tolerance {tol})"
        )
    return Reconstruction(ConfusionMatrix.from_counts(tp, n_pos - tp, n_neg - tn, tn), feasible, ambiguous)


# -- full reports -----------------------------------------------------------------


@dataclass
class EvaluationReport:
    task: str
    confusion: ConfusionMatrix
    scopes: dict[str, MetricReport]
    curves: dict[str, ROCCurve]
    cutoff: float = 0.5

    def metrics_dict(self) -> dict:
        return {scope: r.to_dict() for scope, r in self.scopes.items()}

    def format_table(self, title: str = "") -> str:
        width = max([len(s) for s in self.scopes] + [8])
        lines = [title] if title else []
        lines.append(f"{'Scope':<{width}}" + "".join(f"{METRIC_HEADERS[m]:>13}" for m in METRIC_ORDER))
        for scope, r in self.scopes.items():
            cells = []
            for m in METRIC_ORDER:
                v = getattr(r, m)
                cells.append(f"{'-' if v is None else format(v, '.3f'):>13}")
            lines.append(f"{scope:<{width}}" + "".join(cells))
        return "\n".join(lines)


def _safe_roc(preds, positive):
    try:
        return roc_auc(preds, positive)
    except DegenerateLabels:
        return None


def evaluate(preds: Sequence[PredictionRecord], task: str, cutoff: float = 0.5) -> EvaluationReport:
    """Pooled metrics for a binary task, or per-class one-vs-rest for three classes.

    In the three-class report each class's accuracy column is the overall
    three-class accuracy.
    """
    preds = list(preds)
    if task == "binary":
        cm = confusion_binary(preds, cutoff)
        report = metrics_from_cm(cm, cutoff, "overall")
        curve = _safe_roc(preds, 1)
        report.auc = None if curve is None else curve.auc
        curves = {"overall": curve} if curve is not None else {}
        return EvaluationReport(task, cm, {"overall": report}, curves, cutoff)
    if task != "multiclass":
        raise ValueError("task must be 'binary' or 'multiclass'")
    cm = confusion_multiclass(preds, 3)
    overall_acc = float(np.trace(cm.counts) / cm.total) if cm.total else 0.0
    scopes, curves = {}, {}
    for c, name in enumerate(MULTICLASS_NAMES):
        report = metrics_from_cm(one_vs_rest(cm, c), cutoff, name)
        report.accuracy = overall_acc
        curve = _safe_roc(preds, c)
        if curve is not None:
            curves[name] = curve
            report.auc = curve.auc
        scopes[name] = report
    return EvaluationReport(task, cm, scopes, curves, cutoff)


# -- artifacts -----------------------------------------------------------------


def class_names(task: str) -> tuple[str, ...]:
    return BINARY_CLASS_NAMES if task == "binary" else MULTICLASS_NAMES


def write_metrics_json(report: EvaluationReport, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.metrics_dict(), indent=2, sort_keys=False) + "\n")
    return path


def write_confusion_csv(report: EvaluationReport, path) -> Path:
    path = Path(path)
    names = class_names(report.task)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\predicted", *names])
        for name, row in zip(names, report.confusion.counts):
            w.writerow([name, *[int(v) for v in row]])
    return path


def write_roc_csv(curve: ROCCurve, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr"])
        for x, y in zip(curve.fpr, curve.tpr):
            w.writerow([repr(float(x)), repr(float(y))])
    return path


def write_radar_csv(reports: dict[str, EvaluationReport], path, scope: str = "overall") -> Path:
    """Long-format ``metric,variant,value`` rows for comparing runs side by side."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "variant", "value"])
        for metric in METRIC_ORDER:
            for variant, report in reports.items():
                r = report.scopes.get(scope) or next(iter(report.scopes.values()))
                value = getattr(r, metric)
                w.writerow([METRIC_HEADERS[metric], variant, "" if value is None else repr(float(value))])
    return path


def write_predictions_csv(preds: Sequence[PredictionRecord], path, num_classes: int) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_or_image_id", "true_label", *[f"score_{i}" for i in range(num_classes)]])
        for p in preds:
            w.writerow([p.unit_id, p.true_label, *[repr(s) for s in p.scores]])
    return path


def read_predictions_csv(path, fold: int = -1) -> list[PredictionRecord]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            scores = [float(row[k]) for k in sorted((k for k in row if k.startswith("score_")),
                                                    key=lambda k: int(k.split("_")[1]))]
            out.append(PredictionRecord(row["subject_or_image_id"], fold, int(row["true_label"]), tuple(scores)))
    return out
