"""End-to-end gradient checks for every model family on tiny shapes.

Each builder assembles a 4x4-grid model with a 3-step teacher-forced batch
and returns a closure recomputing its training loss, so finite differences
can probe every parameter.  Dropout is disabled (a random mask would break
the finite-difference premise); batch norm runs in training mode.
"""
from __future__ import annotations

import numpy as np

from fovealsearch import models
from fovealsearch.encoding import GridSpec, TASK_ONEHOT
from fovealsearch.gradcheck import check_scalar_function
from fovealsearch.tensor import Tensor

TINY_GRID = GridSpec(rows=4, cols=4, image_height=128, image_width=128)
N_STEPS = 3
BATCH = 2
IN_CHANNELS = 3
N_TASKS = 2


def _random_inputs(rng: np.random.Generator):
    xs = [Tensor(rng.normal(size=(BATCH, 4, 4, IN_CHANNELS))) for _ in range(N_STEPS)]
    task = np.zeros((BATCH, N_TASKS))
    task[np.arange(BATCH), rng.integers(N_TASKS, size=BATCH)] = 1.0
    soft = rng.uniform(size=(N_STEPS, BATCH, TINY_GRID.n_cells))
    soft /= soft.sum(axis=-1, keepdims=True)
    det = (rng.random(size=(N_STEPS, BATCH)) < 0.5).astype(np.float64)
    return xs, task, soft, det


def build_high_level(seed: int):
    rng = np.random.default_rng(seed)
    model = models.HighLevelFixationModel(
        TINY_GRID, IN_CHANNELS, N_TASKS, task_encoding=TASK_ONEHOT,
        filters=2, kernel_size=4, stride=2, padding=1, dropout_rate=0.0, rng=rng,
    )
    xs, task, targets, _ = _random_inputs(rng)

    def loss():
        return models.seq_ce_loss(model.forward(xs, task, mode="train"), targets)

    return loss, model.params()


def build_panoptic(seed: int, depth: int, head: str):
    rng = np.random.default_rng(seed)
    model = models.PanopticFixationModel(
        TINY_GRID, IN_CHANNELS, N_TASKS, depth=depth, head=head,
        filters=2, kernel_size=3, stride=1, padding=1, rng=rng,
    )
    xs, _, targets, _ = _random_inputs(rng)
    task = np.zeros((BATCH, 4, 4, N_TASKS))
    task[:, :, :, 0] = 1.0

    def loss():
        return models.seq_ce_loss(model.forward(xs, task, mode="train"), targets)

    return loss, model.params()


def build_dual(seed: int, architecture: str, w_fix: float = 0.6):
    rng = np.random.default_rng(seed)
    model = models.DualTaskModel(
        TINY_GRID, IN_CHANNELS, N_TASKS, architecture=architecture,
        filters=2, kernel_size=4, stride=2, padding=1, det_units=(4, 3),
        dropout_rate=0.0, rng=rng,
    )
    xs, task, soft, det = _random_inputs(rng)

    def loss():
        fix_probs, det_probs = model.forward(xs, task, mode="train")
        l_fix = models.seq_ce_loss(fix_probs, soft)
        l_det = models.det_bce_loss(det_probs, det, weights=(1.6, 0.7))
        return models.dual_loss(l_fix, l_det, w_fix)

    return loss, model.params()


def build_detector(seed: int):
    rng = np.random.default_rng(seed)
    model = models.DetectionHead(in_dim=10, units=(6, 4), dropout_rate=0.0, rng=rng)
    x = Tensor(rng.normal(size=(5, 10)))
    y = (rng.random(5) < 0.5).astype(np.float64)

    def loss():
        return models.det_bce_loss(model.forward(x, mode="train"), y)

    return loss, model.params()


def check_all_families(seed: int = 0) -> dict[str, float]:
    """Max relative gradient error per family (64-bit mode expected)."""
    checks = {
        "high_level": build_high_level(seed),
        "panoptic_d1": build_panoptic(seed, depth=1, head=models.HEAD_SIGMOID),
        "panoptic_d3": build_panoptic(seed, depth=3, head=models.HEAD_SOFTMAX),
        "dual_A": build_dual(seed, "A"),
        "dual_B": build_dual(seed, "B"),
        "dual_C": build_dual(seed, "C"),
        "detector": build_detector(seed),
    }
    return {
        name: max(check_scalar_function(loss, params).values())
        for name, (loss, params) in checks.items()
    }
