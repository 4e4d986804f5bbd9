import itertools

import numpy as np
import pytest

from fovealsearch.data import ScanpathRecord
from fovealsearch.decode import Beam, beam_search, greedy_search, random_scanpath
from fovealsearch.encoding import GridSpec

GRID3 = GridSpec(rows=3, cols=3, image_height=96, image_width=96)
GRID4 = GridSpec(rows=4, cols=4, image_height=128, image_width=128)


class TableStepper:
    """Scores depend on the current fixation cell via a lookup table."""

    def __init__(self, grid, table, det=None):
        self.grid = grid
        self.table = table  # (n_cells, n_cells) row: current cell index
        self.det = det

    def begin(self):
        return 0

    def step(self, state, cells):
        idx = self.grid.cell_index(cells[-1])
        det = None if self.det is None else float(self.det[idx])
        return self.table[idx], state + 1, det


def random_table_stepper(grid, seed, det=False):
    rng = np.random.default_rng(seed)
    table = rng.uniform(0.01, 1.0, size=(grid.n_cells, grid.n_cells))
    table /= table.sum(axis=1, keepdims=True)
    det_probs = rng.uniform(size=grid.n_cells) if det else None
    return TableStepper(grid, table, det_probs)


@pytest.mark.parametrize("seed", range(100))
def test_beam_width_one_equals_greedy(seed):
    stepper = random_table_stepper(GRID4, seed)
    beams = beam_search(stepper, GRID4, beam_width=1, length=7)
    greedy = greedy_search(random_table_stepper(GRID4, seed), GRID4, length=7)
    assert beams[0].cells == greedy.cells
    assert beams[0].log_prob == pytest.approx(greedy.log_prob, abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_full_width_beam_matches_exhaustive_enumeration(seed):
    stepper = random_table_stepper(GRID3, seed)
    beams = beam_search(stepper, GRID3, beam_width=81, length=3)

    def path_score(cells):
        score = 0.0
        current = GRID3.center_cell
        for cell in cells:
            row = stepper.table[GRID3.cell_index(current)]
            score += np.log(row[GRID3.cell_index(cell)])
            current = cell
        return score

    all_cells = [(r, c) for r in range(3) for c in range(3)]
    best = max(
        (path_score(list(path)) for path in itertools.product(all_cells, repeat=2)),
    )
    assert beams[0].log_prob == pytest.approx(best, abs=1e-10)


def test_stationary_distribution_repeats_argmax():
    probs = np.full(16, 0.01)
    probs[5] = 1.0 - 0.01 * 15
    table = np.tile(probs, (16, 1))
    beams = beam_search(TableStepper(GRID4, table), GRID4, beam_width=3, length=7)
    expected = GRID4.index_cell(5)
    assert beams[0].cells == [GRID4.center_cell] + [expected] * 6


def test_sequences_start_at_center_with_exact_length():
    stepper = random_table_stepper(GRID4, 7)
    for beam in beam_search(stepper, GRID4, beam_width=5, length=7):
        assert beam.cells[0] == GRID4.center_cell == (2, 2)
        assert len(beam.cells) == 7


def test_center_cell_of_10x16_grid():
    grid = GridSpec()
    assert grid.center_cell == (5, 8)


def test_beam_scores_audit_against_replay():
    stepper = random_table_stepper(GRID4, 11)
    beams = beam_search(stepper, GRID4, beam_width=6, length=5)
    for beam in beams:
        replay = 0.0
        current = GRID4.center_cell
        for cell in beam.cells[1:]:
            row = stepper.table[GRID4.cell_index(current)]
            replay += np.log(max(row[GRID4.cell_index(cell)], 1e-12))
            current = cell
        assert beam.log_prob == pytest.approx(replay, abs=1e-10)


def test_beams_sorted_best_first_and_scores_non_increasing():
    stepper = random_table_stepper(GRID4, 13)
    beams = beam_search(stepper, GRID4, beam_width=10, length=6)
    scores = [b.log_prob for b in beams]
    assert scores == sorted(scores, reverse=True)


@pytest.mark.parametrize("seed", range(10))
def test_wider_beam_never_scores_worse(seed):
    grid = GRID3
    top = None
    for width in (1, 3, 9, 27):
        stepper = random_table_stepper(grid, seed)
        best = beam_search(stepper, grid, beam_width=width, length=4)[0].log_prob
        if top is not None:
            assert best >= top - 1e-12
        top = best


def test_tie_breaking_is_deterministic():
    table = np.full((16, 16), 1.0 / 16.0)
    beams = beam_search(TableStepper(GRID4, table), GRID4, beam_width=4, length=3)
    # uniform scores: ties resolve to lowest row, then column
    assert beams[0].cells == [(2, 2), (0, 0), (0, 0)]
    # round 1 ranks cells, round 2 ranks tied parents in order
    assert [b.cells[1] for b in beams] == [(0, 0), (0, 1), (0, 2), (0, 3)]
    assert [b.cells[2] for b in beams] == [(0, 0)] * 4
    again = beam_search(TableStepper(GRID4, table), GRID4, beam_width=4, length=3)
    assert [b.cells for b in again] == [b.cells for b in beams]


def test_beam_width_clamped_to_candidate_count():
    stepper = random_table_stepper(GRID3, 3)
    beams = beam_search(stepper, GRID3, beam_width=100, length=3)
    assert len(beams) == 81  # 9 after the first round, 81 after the second


def test_dual_steppers_collect_one_det_prob_per_generated_fixation():
    stepper = random_table_stepper(GRID4, 17, det=True)
    beams = beam_search(stepper, GRID4, beam_width=4, length=7)
    for beam in beams:
        assert len(beam.det_probs) == 6


def test_beam_argument_validation():
    stepper = random_table_stepper(GRID4, 0)
    with pytest.raises(ValueError):
        beam_search(stepper, GRID4, beam_width=0, length=7)
    with pytest.raises(ValueError):
        beam_search(stepper, GRID4, beam_width=3, length=1)


def make_pool(task, n):
    return [
        ScanpathRecord(
            name=f"{task}{i}", task=task, target_present=False, bbox=None,
            xs=[float(i)] * 7, ys=[float(i)] * 7, split="train",
        )
        for i in range(n)
    ]


def test_random_scanpath_single_pool_and_determinism():
    pool = make_pool("car", 1) + make_pool("tv", 3)
    rng = np.random.default_rng(0)
    assert random_scanpath(pool, "car", rng).name == "car0"
    a = random_scanpath(pool, "tv", np.random.default_rng(5)).name
    b = random_scanpath(pool, "tv", np.random.default_rng(5)).name
    assert a == b


def test_random_scanpath_uniform_frequencies():
    pool = make_pool("cup", 4)
    rng = np.random.default_rng(1)
    counts = {r.name: 0 for r in pool}
    for _ in range(10_000):
        counts[random_scanpath(pool, "cup", rng).name] += 1
    for count in counts.values():
        assert count / 10_000 == pytest.approx(0.25, abs=0.02)


def test_random_scanpath_empty_pool():
    with pytest.raises(ValueError):
        random_scanpath(make_pool("car", 2), "tv", np.random.default_rng(0))
