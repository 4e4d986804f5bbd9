"""Evaluation suite for predicted and human scanpaths.

Search accuracy, target-fixation-probability curves and their area,
probability mismatch against human curves, scanpath ratio, and binary
detection metrics.  Sequence-level scores credit hits from step 1 on; the
imposed center start never counts.  Aggregation is macro: means are taken
over target classes first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from fovealsearch.encoding import Cell, GridSpec, cell_on_target

SEQUENCE_LENGTH = 7


def first_hit_step(cells: Sequence[Cell], bbox, grid: GridSpec) -> int | None:
    """Earliest step >= 1 whose cell overlaps the box, or None."""
    if bbox is None:
        raise ValueError("record without bbox cannot be scored for search")
    for t, cell in enumerate(cells):
        if t == 0:
            continue
        if cell_on_target(cell, bbox, grid):
            return t
    return None


def search_accuracy(paths: Sequence[Sequence[Cell]], bboxes: Sequence, grid: GridSpec) -> float:
    """Fraction of sequences with any post-start fixation on the target."""
    if len(paths) != len(bboxes):
        raise ValueError("paths and bboxes must align")
    if not paths:
        raise ValueError("no sequences to score")
    hits = sum(first_hit_step(cells, bbox, grid) is not None for cells, bbox in zip(paths, bboxes))
    return hits / len(paths)


def tfp_curve(
    paths: Sequence[Sequence[Cell]], bboxes: Sequence, grid: GridSpec,
    length: int = SEQUENCE_LENGTH,
) -> np.ndarray:
    """Cumulative fraction of sequences whose first hit occurred by step t."""
    if not paths:
        raise ValueError("no sequences to score")
    curve = np.zeros(length, dtype=np.float64)
    for cells, bbox in zip(paths, bboxes):
        hit = first_hit_step(cells, bbox, grid)
        if hit is not None and hit < length:
            curve[hit:] += 1.0
    return curve / len(paths)


def tfp_auc(curve: np.ndarray) -> float:
    """Unit-step area under the curve over the post-start steps."""
    return float(np.sum(curve[1:]))


def probability_mismatch(model_curve: np.ndarray, human_curve: np.ndarray) -> float:
    """L1 distance between two TFP curves over the post-start steps."""
    model_curve = np.asarray(model_curve, dtype=np.float64)
    human_curve = np.asarray(human_curve, dtype=np.float64)
    if model_curve.shape != human_curve.shape:
        raise ValueError("curves must have equal length")
    return float(np.abs(model_curve[1:] - human_curve[1:]).sum())


def scanpath_ratio(cells: Sequence[Cell], bbox, grid: GridSpec) -> float | None:
    """Straight-line distance to the target over traveled path length.

    Distances are in pixels between cell centers; the target point is the
    box center.  Repeated fixations add zero length.  Capped at 1.0;
    undefined (None) when the gaze never moves.
    """
    if bbox is None:
        raise ValueError("record without bbox cannot be scored for search")
    centers = [grid.cell_center(c) for c in cells]
    path_length = sum(math.dist(a, b) for a, b in zip(centers, centers[1:]))
    if path_length == 0.0:
        return None
    bx, by, bw, bh = bbox
    straight = math.dist(centers[0], (bx + bw / 2.0, by + bh / 2.0))
    return min(1.0, straight / path_length)


def detection_metrics(
    probabilities: Sequence[float], labels: Sequence[float], threshold: float = 0.5
) -> dict:
    """Accuracy, precision, recall at a threshold.

    Precision is None when nothing is predicted positive; recall is None
    without any positive label.
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    truth = np.asarray(labels, dtype=np.float64)
    if probs.shape != truth.shape:
        raise ValueError("predictions and labels must align")
    predicted = probs >= threshold
    actual = truth >= 0.5
    tp = int(np.sum(predicted & actual))
    tn = int(np.sum(~predicted & ~actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    total = tp + tn + fp + fn
    return {
        "accuracy": (tp + tn) / total if total else None,
        "precision": tp / (tp + fp) if (tp + fp) else None,
        "recall": tp / (tp + fn) if (tp + fn) else None,
        "confusion": {"tp": tp, "fp": fp, "fn": fn, "tn": tn},
    }


def step_confusion_matrices(
    probabilities: np.ndarray, labels: np.ndarray, threshold: float = 0.5
) -> list[dict]:
    """Per-time-step 2x2 confusion counts for (N, T) detection outputs."""
    probs = np.asarray(probabilities, dtype=np.float64)
    truth = np.asarray(labels, dtype=np.float64)
    if probs.shape != truth.shape:
        raise ValueError("predictions and labels must align")
    return [
        detection_metrics(probs[:, t], truth[:, t], threshold)["confusion"]
        for t in range(probs.shape[1])
    ]


# ---------------------------------------------------------------------------
# report assembly


@dataclass
class ClassMetrics:
    search_accuracy: float
    tfp: list[float]
    tfp_auc: float
    probability_mismatch: float | None
    scanpath_ratio: float | None
    n_sequences: int

    def to_json(self) -> dict:
        return {
            "search_accuracy": self.search_accuracy,
            "tfp": list(self.tfp),
            "tfp_auc": self.tfp_auc,
            "probability_mismatch": self.probability_mismatch,
            "scanpath_ratio": self.scanpath_ratio,
            "n_sequences": self.n_sequences,
        }


@dataclass
class MetricsReport:
    per_class: dict[str, ClassMetrics]
    macro: ClassMetrics
    human_per_class: dict[str, ClassMetrics] | None = None
    human_macro: ClassMetrics | None = None
    detection: dict | None = None

    def to_json(self) -> dict:
        payload = {
            "per_class": {k: v.to_json() for k, v in self.per_class.items()},
            "macro": self.macro.to_json(),
        }
        if self.human_macro is not None:
            payload["human"] = {
                "per_class": {k: v.to_json() for k, v in self.human_per_class.items()},
                "macro": self.human_macro.to_json(),
            }
        if self.detection is not None:
            payload["detection"] = self.detection
        return payload


def _mean_or_none(values: list) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def _class_metrics(
    paths, bboxes, grid, length, human_curve: np.ndarray | None
) -> ClassMetrics:
    curve = tfp_curve(paths, bboxes, grid, length)
    ratios = [scanpath_ratio(cells, bbox, grid) for cells, bbox in zip(paths, bboxes)]
    return ClassMetrics(
        search_accuracy=search_accuracy(paths, bboxes, grid),
        tfp=[float(v) for v in curve],
        tfp_auc=tfp_auc(curve),
        probability_mismatch=(
            probability_mismatch(curve, human_curve) if human_curve is not None else None
        ),
        scanpath_ratio=_mean_or_none(ratios),
        n_sequences=len(paths),
    )


def _macro(per_class: Mapping[str, ClassMetrics], length: int) -> ClassMetrics:
    classes = list(per_class.values())
    curves = np.array([c.tfp for c in classes])
    return ClassMetrics(
        search_accuracy=float(np.mean([c.search_accuracy for c in classes])),
        tfp=[float(v) for v in curves.mean(axis=0)],
        tfp_auc=float(np.mean([c.tfp_auc for c in classes])),
        probability_mismatch=_mean_or_none([c.probability_mismatch for c in classes]),
        scanpath_ratio=_mean_or_none([c.scanpath_ratio for c in classes]),
        n_sequences=int(sum(c.n_sequences for c in classes)),
    )


def build_report(
    predictions: Iterable[tuple[str, Sequence[Cell], tuple | None]],
    human: Iterable[tuple[str, Sequence[Cell], tuple | None]] | None = None,
    grid: GridSpec | None = None,
    length: int = SEQUENCE_LENGTH,
    detection: dict | None = None,
) -> MetricsReport:
    """Assemble the full report from (task, cells, bbox) triples.

    Only target-present entries (bbox given) are scored for search
    metrics.  When human triples are supplied, per-class human TFP curves
    feed the probability mismatch and a human section is included.
    """
    if grid is None:
        raise ValueError("build_report needs the grid")
    by_task: dict[str, tuple[list, list]] = {}
    for task, cells, bbox in predictions:
        if bbox is None:
            continue
        by_task.setdefault(task, ([], []))
        by_task[task][0].append(list(cells))
        by_task[task][1].append(bbox)
    if not by_task:
        raise ValueError("no target-present sequences to evaluate")

    human_by_task: dict[str, tuple[list, list]] = {}
    if human is not None:
        for task, cells, bbox in human:
            if bbox is None:
                continue
            human_by_task.setdefault(task, ([], []))
            human_by_task[task][0].append(list(cells))
            human_by_task[task][1].append(bbox)

    human_metrics = {}
    human_curves = {}
    for task, (paths, boxes) in sorted(human_by_task.items()):
        human_metrics[task] = _class_metrics(paths, boxes, grid, length, None)
        human_curves[task] = np.asarray(human_metrics[task].tfp)

    per_class = {}
    for task, (paths, boxes) in sorted(by_task.items()):
        per_class[task] = _class_metrics(paths, boxes, grid, length, human_curves.get(task))

    return MetricsReport(
        per_class=per_class,
        macro=_macro(per_class, length),
        human_per_class=human_metrics or None,
        human_macro=_macro(human_metrics, length) if human_metrics else None,
        detection=detection,
    )


def tfp_table_rows(report: MetricsReport) -> list[tuple[int, float, float | None]]:
    """Rows of (step, model TFP, human TFP) for CSV export."""
    human = report.human_macro.tfp if report.human_macro is not None else None
    rows = []
    for step, value in enumerate(report.macro.tfp):
        rows.append((step, value, human[step] if human is not None else None))
    return rows
