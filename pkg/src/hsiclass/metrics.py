"""Performance measures for classification with a reject option.

Over an evaluation set S (pixels with nonzero truth labels), with C the
correctly classified pixels and R the rejected ones:

    nonrejected accuracy   A = |C and not-R| / |not-R|
    classification quality Q = (|C and not-R| + |not-C and R|) / |S|
    rejected fraction      r = |R| / |S|

Q counts correct decisions of the combined classify-or-reject system, so
classifiers running at different rejected fractions stay comparable.
When every pixel is rejected A has an empty denominator; it is reported
as 1.0 with a_defined=False rather than guessed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .fields import LabelMap, Labeling, RejectMask
from .io import fmt_float


@dataclass(frozen=True)
class ClassReport:
    label: int
    oa: float
    a: float
    q: float
    r: float
    n: int
    a_defined: bool = True


@dataclass(frozen=True)
class RejectionReport:
    a: float
    q: float
    r_achieved: float
    overall_accuracy_no_reject: float
    per_class: tuple[ClassReport, ...]
    a_defined: bool = True


def _eval_view(labeling: Labeling, truth: LabelMap, mask: RejectMask,
               eval_indices: np.ndarray):
    idx = np.asarray(eval_indices, dtype=np.int64)
    idx = idx[truth.flat()[idx] > 0]
    if idx.size == 0:
        raise ValueError("evaluation set has no labeled pixels")
    correct = labeling.flat()[idx] == truth.flat()[idx]
    rejected = mask.rejected[idx]
    return idx, correct, rejected


def nonrejected_accuracy(labeling: Labeling, truth: LabelMap, mask: RejectMask,
                         eval_indices: np.ndarray) -> float:
    _, correct, rejected = _eval_view(labeling, truth, mask, eval_indices)
    kept = ~rejected
    if not kept.any():
        return 1.0
    return float((correct & kept).sum() / kept.sum())


def classification_quality(labeling: Labeling, truth: LabelMap, mask: RejectMask,
                           eval_indices: np.ndarray) -> float:
    idx, correct, rejected = _eval_view(labeling, truth, mask, eval_indices)
    good = (correct & ~rejected).sum() + (~correct & rejected).sum()
    return float(good / idx.size)


def full_report(labeling: Labeling, truth: LabelMap, mask: RejectMask,
                eval_indices: np.ndarray) -> RejectionReport:
    """Global and per-class A/Q/r plus the no-rejection accuracies."""
    idx, correct, rejected = _eval_view(labeling, truth, mask, eval_indices)
    truth_at = truth.flat()[idx]

    def _block(sel: np.ndarray) -> tuple[float, float, float, float, bool]:
        c, rj = correct[sel], rejected[sel]
        kept = ~rj
        oa = float(c.sum() / sel.sum())
        defined = bool(kept.any())
        a = float((c & kept).sum() / kept.sum()) if defined else 1.0
        q = float(((c & kept).sum() + (~c & rj).sum()) / sel.sum())
        r = float(rj.sum() / sel.sum())
        return oa, a, q, r, defined

    rows = []
    for cls in np.unique(truth_at):
        sel = truth_at == cls
        oa, a, q, r, defined = _block(sel)
        rows.append(ClassReport(int(cls), oa, a, q, r, int(sel.sum()), defined))

    oa, a, q, r, defined = _block(np.ones(idx.size, dtype=bool))
    return RejectionReport(a=a, q=q, r_achieved=r,
                           overall_accuracy_no_reject=oa,
                           per_class=tuple(rows), a_defined=defined)


def write_report_csv(report: RejectionReport, path) -> None:
    """Table rows per class, then an overall row; Table-1 column order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "OA", "A", "Q", "r", "n", "a_defined"])
        for row in report.per_class:
            writer.writerow([row.label, fmt_float(row.oa), fmt_float(row.a),
                             fmt_float(row.q), fmt_float(row.r), row.n,
                             int(row.a_defined)])
        n_total = sum(row.n for row in report.per_class)
        writer.writerow(["overall", fmt_float(report.overall_accuracy_no_reject),
                         fmt_float(report.a), fmt_float(report.q),
                         fmt_float(report.r_achieved), n_total,
                         int(report.a_defined)])
