"""Inference-time scanpath generation.

Global-top-m beam search over grid cells with deterministic tie-breaking,
its greedy special case, and the random-human-scanpath baseline.  A
stepper supplies per-step cell scores: ``begin()`` yields the initial
recurrent state and ``step(state, cells)`` returns (scores over H*W cells,
new state, optional detection probability).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fovealsearch import seeding
from fovealsearch.data import ScanpathRecord
from fovealsearch.encoding import GridSpec

Cell = tuple[int, int]

LOG_FLOOR = 1e-12


@dataclass
class Beam:
    """One decoded fixation sequence with its cumulative log score."""

    cells: list[Cell]
    log_prob: float
    state: object
    det_probs: list[float] = field(default_factory=list)

    def pixel_path(self, grid: GridSpec) -> tuple[list[float], list[float]]:
        centers = [grid.cell_center(c) for c in self.cells]
        return [x for x, _ in centers], [y for _, y in centers]


def beam_search(stepper, grid: GridSpec, beam_width: int = 20, length: int = 7) -> list[Beam]:
    """Best-first decoding keeping the m highest-scoring sequences per step.

    Sequences start at the center cell.  Each round every live beam is
    expanded over all H*W cells; candidates are ranked by cumulative log
    probability with ties broken by (row, column, parent beam index), and
    the global top m survive.  Uses m * (length - 1) model evaluations.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    if length < 2:
        raise ValueError("length must be >= 2")
    beams = [Beam(cells=[grid.center_cell], log_prob=0.0, state=stepper.begin())]
    for _ in range(length - 1):
        candidates = []
        outcomes = []
        for parent_idx, beam in enumerate(beams):
            scores, new_state, det_prob = stepper.step(beam.state, beam.cells)
            outcomes.append((new_state, det_prob))
            log_scores = np.log(np.maximum(np.asarray(scores, dtype=np.float64), LOG_FLOOR))
            for cell_idx in range(grid.n_cells):
                row, col = grid.index_cell(cell_idx)
                candidates.append(
                    (beam.log_prob + log_scores[cell_idx], row, col, parent_idx)
                )
        candidates.sort(key=lambda item: (-item[0], item[1], item[2], item[3]))
        keep = min(beam_width, len(candidates))
        next_beams = []
        for score, row, col, parent_idx in candidates[:keep]:
            parent = beams[parent_idx]
            new_state, det_prob = outcomes[parent_idx]
            det = parent.det_probs + ([det_prob] if det_prob is not None else [])
            next_beams.append(
                Beam(cells=parent.cells + [(row, col)], log_prob=score, state=new_state, det_probs=det)
            )
        beams = next_beams
    return beams


def greedy_search(stepper, grid: GridSpec, length: int = 7) -> Beam:
    """Argmax decoding; independent of the beam machinery for cross-checks.

    Ties resolve to the lowest cell index, matching the beam tie rule.
    """
    cells: list[Cell] = [grid.center_cell]
    state = stepper.begin()
    log_prob = 0.0
    det_probs: list[float] = []
    for _ in range(length - 1):
        scores, state, det_prob = stepper.step(state, cells)
        scores = np.asarray(scores, dtype=np.float64)
        best = int(np.argmax(scores))
        log_prob += float(np.log(max(scores[best], LOG_FLOOR)))
        cells.append(grid.index_cell(best))
        if det_prob is not None:
            det_probs.append(det_prob)
    return Beam(cells=cells, log_prob=log_prob, state=state, det_probs=det_probs)


def random_scanpath(
    train_records: Sequence[ScanpathRecord], task: str, rng: np.random.Generator
) -> ScanpathRecord:
    """Baseline: a uniformly drawn human training sequence of the same task."""
    pool = [r for r in train_records if r.task == task]
    if not pool:
        raise ValueError(f"no training scanpaths for task {task!r}")
    return pool[int(rng.integers(len(pool)))]


def baseline_rng(seed: int) -> np.random.Generator:
    return seeding.stream(seed, "baseline")
