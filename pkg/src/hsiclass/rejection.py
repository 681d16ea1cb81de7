"""Turning the confidence field into reject decisions.

Rejection needs nothing but the confidence ordering, so any requested
fraction can be applied, swept, or re-chosen instantly: the context
solver never reruns. Masks are nested along the fraction axis (the
rejected set at r1 is a subset of the one at r2 >= r1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .fields import LabelMap, Labeling, RejectionField, RejectMask
from .io import fmt_float
from .metrics import classification_quality, nonrejected_accuracy

DEFAULT_GRID = tuple(round(0.01 * i, 2) for i in range(51))


def reject_at_fraction(field: RejectionField, eval_indices: np.ndarray,
                       fraction: float) -> RejectMask:
    """Reject the floor(fraction * |eval|) lowest-confidence eval pixels.

    Ascending confidence order with ties broken by ascending pixel index.
    Pixels outside eval_indices are never rejected. The floor gets a 1e-9
    guard so grid fractions like 0.3 * 10 do not lose a pixel to binary
    rounding.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    idx = np.asarray(eval_indices, dtype=np.int64)
    n_reject = int(math.floor(fraction * idx.size + 1e-9))
    order = np.lexsort((idx, field.confidence[idx]))
    rejected = np.zeros(field.n, dtype=bool)
    rejected[idx[order[:n_reject]]] = True
    return RejectMask(rejected, fraction, idx)


@dataclass(frozen=True)
class SweepPoint:
    r_requested: float
    r_achieved: float
    a: float
    q: float


def sweep_fractions(field: RejectionField, labeling: Labeling, truth: LabelMap,
                    eval_indices: np.ndarray, grid=DEFAULT_GRID) -> list[SweepPoint]:
    """Accuracy/quality curve over a sorted grid of rejected fractions."""
    grid = list(grid)
    if any(not 0.0 <= g <= 1.0 for g in grid) or sorted(grid) != grid:
        raise ValueError("grid must be sorted fractions in [0, 1]")
    points = []
    for r in grid:
        mask = reject_at_fraction(field, eval_indices, r)
        points.append(SweepPoint(
            r_requested=r,
            r_achieved=mask.achieved_fraction,
            a=nonrejected_accuracy(labeling, truth, mask, eval_indices),
            q=classification_quality(labeling, truth, mask, eval_indices),
        ))
    return points


def estimate_optimal_fraction(field: RejectionField, labeling: Labeling,
                              truth: LabelMap, validation_indices: np.ndarray,
                              grid=DEFAULT_GRID) -> tuple[float, float]:
    """Grid fraction maximizing Q on the validation pixels; ties take the
    smallest fraction."""
    validation_indices = np.asarray(validation_indices, dtype=np.int64)
    if validation_indices.size == 0:
        raise ValueError("validation set is empty")
    best_r, best_q = None, -1.0
    for point in sweep_fractions(field, labeling, truth, validation_indices, grid):
        if point.q > best_q:
            best_r, best_q = point.r_requested, point.q
    return best_r, best_q


def write_sweep_csv(points: list[SweepPoint], path, r_star: float | None = None,
                    r_star_source: str = "validation") -> None:
    """Sweep CSV: r_requested, r_achieved, A, Q, and (when an estimated
    optimum is given) a 0/1 flag column named after where r* came from."""
    header = ["r_requested", "r_achieved", "A", "Q"]
    if r_star is not None:
        header.append(f"r_star_from_{r_star_source}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for point in points:
            row = [fmt_float(point.r_requested), fmt_float(point.r_achieved),
                   fmt_float(point.a), fmt_float(point.q)]
            if r_star is not None:
                row.append(int(point.r_requested == r_star))
            writer.writerow(row)
