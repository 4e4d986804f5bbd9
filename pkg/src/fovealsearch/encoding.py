"""Grid discretization, ground-truth label grids, and task encodings.

The image is discretized into an H x W cell grid (10 x 16 over 320 x 512 by
default).  Fixation targets become either one-hot grids or unit-variance
Gaussian bumps; search tasks become one-hot vectors, fixation heat maps
(2-D or flattened), or all-ones spatial planes per class.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from fovealsearch.data import ScanpathRecord

Cell = tuple[int, int]

TASK_ONEHOT = "onehot"
TASK_HEATMAP_2D = "heatmap2d"
TASK_HEATMAP_FLAT = "heatmapflat"
TASK_SPATIAL = "spatial"
TASK_KINDS = (TASK_ONEHOT, TASK_HEATMAP_2D, TASK_HEATMAP_FLAT, TASK_SPATIAL)

LABEL_ONEHOT = "onehot"
LABEL_GAUSSIAN = "gaussian"
LABEL_KINDS = (LABEL_ONEHOT, LABEL_GAUSSIAN)


@dataclass(frozen=True)
class GridSpec:
    """Cell grid over a fixed-size image; cell sizes must be integral."""

    rows: int = 10
    cols: int = 16
    image_height: int = 320
    image_width: int = 512

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have at least one row and column")
        if self.image_height % self.rows or self.image_width % self.cols:
            raise ValueError(
                f"image {self.image_height}x{self.image_width} not divisible by "
                f"grid {self.rows}x{self.cols}"
            )

    @property
    def cell_height(self) -> int:
        return self.image_height // self.rows

    @property
    def cell_width(self) -> int:
        return self.image_width // self.cols

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def center_cell(self) -> Cell:
        return (self.rows // 2, self.cols // 2)

    @property
    def center_pixel(self) -> tuple[float, float]:
        return (self.image_width / 2.0, self.image_height / 2.0)

    def cell_center(self, cell: Cell) -> tuple[float, float]:
        """Pixel (x, y) at the center of a cell."""
        r, c = cell
        return ((c + 0.5) * self.cell_width, (r + 0.5) * self.cell_height)

    def cell_rect(self, cell: Cell) -> tuple[float, float, float, float]:
        """Pixel (x, y, w, h) rectangle covered by a cell."""
        r, c = cell
        return (c * self.cell_width, r * self.cell_height, self.cell_width, self.cell_height)

    def cell_index(self, cell: Cell) -> int:
        return cell[0] * self.cols + cell[1]

    def index_cell(self, index: int) -> Cell:
        return (index // self.cols, index % self.cols)

    def to_json(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "image_height": self.image_height,
            "image_width": self.image_width,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "GridSpec":
        return cls(**{k: int(payload[k]) for k in ("rows", "cols", "image_height", "image_width")})


def pixel_to_cell(x: float, y: float, grid: GridSpec) -> Cell:
    """Map pixel coordinates to (row, col); out-of-range values clamp."""
    row = int(np.floor(y / grid.cell_height))
    col = int(np.floor(x / grid.cell_width))
    return (min(max(row, 0), grid.rows - 1), min(max(col, 0), grid.cols - 1))


@dataclass(frozen=True)
class LabelGrid:
    """Ground-truth grid for one fixation step."""

    kind: str
    values: np.ndarray
    cell: Cell

    def __post_init__(self):
        if self.kind not in LABEL_KINDS:
            raise ValueError(f"unknown label kind {self.kind!r}")
        v = self.values
        if self.kind == LABEL_ONEHOT:
            if np.count_nonzero(v) != 1 or v.max() != 1.0:
                raise ValueError("one-hot label must have a single unit cell")
        else:
            if (v < 0).any() or abs(v.sum() - 1.0) > 1e-6:
                raise ValueError("gaussian label must be a distribution")
        if np.unravel_index(np.argmax(v), v.shape) != tuple(self.cell):
            raise ValueError("label argmax must sit on the source cell")


def onehot_label(cell: Cell, grid: GridSpec) -> LabelGrid:
    values = np.zeros((grid.rows, grid.cols), dtype=np.float64)
    values[cell] = 1.0
    return LabelGrid(LABEL_ONEHOT, values, tuple(cell))


def gaussian_label(cell: Cell, grid: GridSpec) -> LabelGrid:
    """Unit-variance Gaussian bump centered on the cell, renormalized to sum 1."""
    r, c = cell
    rr, cc = np.meshgrid(np.arange(grid.rows), np.arange(grid.cols), indexing="ij")
    values = np.exp(-((rr - r) ** 2 + (cc - c) ** 2) / 2.0)
    values /= values.sum()
    return LabelGrid(LABEL_GAUSSIAN, values, tuple(cell))


def make_label(cell: Cell, grid: GridSpec, kind: str) -> LabelGrid:
    if kind == LABEL_ONEHOT:
        return onehot_label(cell, grid)
    if kind == LABEL_GAUSSIAN:
        return gaussian_label(cell, grid)
    raise ValueError(f"unknown label kind {kind!r}")


@dataclass(frozen=True)
class TaskEncoding:
    """Search-target conditioning input in one of four layouts."""

    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task encoding kind {self.kind!r}")
        v = self.values
        if self.kind == TASK_ONEHOT:
            if v.ndim != 1 or np.count_nonzero(v) != 1 or v.max() != 1.0:
                raise ValueError("one-hot task encoding must have exactly one unit entry")
        elif self.kind in (TASK_HEATMAP_2D, TASK_HEATMAP_FLAT):
            if (v < 0).any() or abs(v.sum() - 1.0) > 1e-6:
                raise ValueError("heat-map task encoding must be a distribution")
        else:
            planes = v.reshape(-1, v.shape[-1])
            ones = (planes == 1.0).all(axis=0)
            zeros = (planes == 0.0).all(axis=0)
            if ones.sum() != 1 or (ones | zeros).sum() != v.shape[-1]:
                raise ValueError("spatial task encoding must be all-ones on one class plane")


def task_onehot(task_index: int, n_tasks: int) -> TaskEncoding:
    values = np.zeros(n_tasks, dtype=np.float64)
    values[task_index] = 1.0
    return TaskEncoding(TASK_ONEHOT, values)


def spatial_task_encoding(task_index: int, n_tasks: int, grid: GridSpec) -> TaskEncoding:
    values = np.zeros((grid.rows, grid.cols, n_tasks), dtype=np.float64)
    values[:, :, task_index] = 1.0
    return TaskEncoding(TASK_SPATIAL, values)


def task_heatmap(
    records: Iterable["ScanpathRecord"], task: str, grid: GridSpec, flat: bool = False
) -> TaskEncoding:
    """Per-cell fixation frequency over a task's training sequences, sum 1.

    Counts every fixation of every matching sequence, so the map reflects
    where observers looked while searching for that target.
    """
    counts = np.zeros((grid.rows, grid.cols), dtype=np.float64)
    seen = False
    for record in records:
        if record.task != task:
            continue
        seen = True
        for x, y in zip(record.xs, record.ys):
            counts[pixel_to_cell(x, y, grid)] += 1.0
    if not seen:
        raise ValueError(f"no training sequences for task {task!r}")
    counts /= counts.sum()
    if flat:
        return TaskEncoding(TASK_HEATMAP_FLAT, counts.reshape(-1))
    return TaskEncoding(TASK_HEATMAP_2D, counts)


def rects_overlap(rect_a: Sequence[float], rect_b: Sequence[float]) -> bool:
    """True when two (x, y, w, h) rectangles share strictly positive area."""
    ax, ay, aw, ah = rect_a
    bx, by, bw, bh = rect_b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise ValueError("rectangles must have positive extent")
    overlap_w = min(ax + aw, bx + bw) - max(ax, bx)
    overlap_h = min(ay + ah, by + bh) - max(ay, by)
    return overlap_w > 0 and overlap_h > 0


def cell_on_target(cell: Cell, bbox: Sequence[float], grid: GridSpec) -> bool:
    return rects_overlap(grid.cell_rect(cell), bbox)


def detection_labels(record: "ScanpathRecord", grid: GridSpec) -> np.ndarray:
    """Per-step binary labels: fixation cell overlaps the target's box.

    Target-absent records get all zeros.  Overlap requires strictly
    positive area, so boxes merely touching a cell boundary do not count.
    """
    steps = len(record.xs)
    labels = np.zeros(steps, dtype=np.float64)
    if not record.target_present:
        return labels
    if record.bbox is None:
        raise ValueError(f"record {record.name!r} is target-present but has no bbox")
    for t, (x, y) in enumerate(zip(record.xs, record.ys)):
        labels[t] = 1.0 if cell_on_target(pixel_to_cell(x, y, grid), record.bbox, grid) else 0.0
    return labels
