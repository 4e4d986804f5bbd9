import numpy as np
import pytest

from fovealsearch import encoding as enc
from fovealsearch.data import ScanpathRecord
from fovealsearch.encoding import GridSpec, pixel_to_cell


GRID = GridSpec()


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(rows=7, cols=16, image_height=320, image_width=512)
    g = GridSpec(rows=6, cols=8, image_height=192, image_width=256)
    assert g.cell_height == 32 and g.cell_width == 32
    assert g.center_cell == (3, 4)


def test_pixel_to_cell_corners():
    assert pixel_to_cell(0, 0, GRID) == (0, 0)
    assert pixel_to_cell(511, 319, GRID) == (9, 15)
    assert pixel_to_cell(256, 160, GRID) == (5, 8)


def test_pixel_to_cell_clamps():
    assert pixel_to_cell(-5, -5, GRID) == (0, 0)
    assert pixel_to_cell(10_000, 10_000, GRID) == (9, 15)


def test_cell_center_roundtrip():
    for r in range(GRID.rows):
        for c in range(GRID.cols):
            x, y = GRID.cell_center((r, c))
            assert pixel_to_cell(x, y, GRID) == (r, c)


def test_cell_index_roundtrip():
    for idx in range(GRID.n_cells):
        assert GRID.cell_index(GRID.index_cell(idx)) == idx


def test_onehot_label():
    label = enc.onehot_label((3, 7), GRID)
    assert label.values.sum() == 1.0
    assert label.values[3, 7] == 1.0


def test_gaussian_label_properties():
    label = enc.gaussian_label((4, 9), GRID)
    assert label.values.sum() == pytest.approx(1.0, abs=1e-6)
    assert np.unravel_index(np.argmax(label.values), label.values.shape) == (4, 9)
    ratio = label.values[4, 10] / label.values[4, 9]
    assert ratio == pytest.approx(np.exp(-0.5), abs=1e-9)


def test_gaussian_label_translation_covariant_in_interior():
    a = enc.gaussian_label((4, 7), GRID).values
    b = enc.gaussian_label((5, 8), GRID).values
    # compare unnormalized shapes: interior offsets share values
    assert a[4, 8] / a[4, 7] == pytest.approx(b[5, 9] / b[5, 8], abs=1e-9)
    assert a[5, 7] / a[4, 7] == pytest.approx(b[6, 8] / b[5, 8], abs=1e-9)


def test_boundary_gaussian_renormalized():
    label = enc.gaussian_label((0, 0), GRID)
    assert label.values.sum() == pytest.approx(1.0, abs=1e-6)
    assert np.unravel_index(np.argmax(label.values), label.values.shape) == (0, 0)


def test_onehot_and_gaussian_share_argmax():
    for cell in [(0, 0), (5, 8), (9, 15)]:
        one = enc.onehot_label(cell, GRID).values
        gauss = enc.gaussian_label(cell, GRID).values
        assert np.unravel_index(np.argmax(one), one.shape) == np.unravel_index(
            np.argmax(gauss), gauss.shape
        )


def make_record(task, cells, grid=GRID, present=True, bbox=None, name="img"):
    xs = [grid.cell_center(c)[0] for c in cells]
    ys = [grid.cell_center(c)[1] for c in cells]
    return ScanpathRecord(
        name=name, task=task, target_present=present, bbox=bbox, xs=xs, ys=ys, split="train"
    )


def test_task_heatmap_single_cell():
    records = [make_record("car", [(2, 3), (2, 3)])]
    hm = enc.task_heatmap(records, "car", GRID)
    assert hm.values[2, 3] == 1.0
    assert hm.values.sum() == 1.0


def test_task_heatmap_two_cells():
    records = [make_record("car", [(1, 1), (8, 14)])]
    hm = enc.task_heatmap(records, "car", GRID)
    assert hm.values[1, 1] == 0.5
    assert hm.values[8, 14] == 0.5


def test_task_heatmap_matches_brute_force_tally():
    rng = np.random.default_rng(8)
    cells = [(int(rng.integers(10)), int(rng.integers(16))) for _ in range(30)]
    records = [make_record("cup", cells[i : i + 5]) for i in range(0, 30, 5)]
    hm = enc.task_heatmap(records, "cup", GRID)
    tally = np.zeros((10, 16))
    for c in cells:
        tally[c] += 1
    assert np.allclose(hm.values, tally / tally.sum())
    flat = enc.task_heatmap(records, "cup", GRID, flat=True)
    assert flat.values.shape == (160,)
    assert np.allclose(flat.values, hm.values.reshape(-1))


def test_task_heatmap_missing_task():
    with pytest.raises(ValueError):
        enc.task_heatmap([make_record("car", [(0, 0)])], "tv", GRID)


def test_task_onehot_and_spatial():
    onehot = enc.task_onehot(3, 18)
    assert onehot.values[3] == 1.0 and onehot.values.sum() == 1.0
    spatial = enc.spatial_task_encoding(2, 5, GRID)
    assert np.all(spatial.values[:, :, 2] == 1.0)
    assert spatial.values.sum() == GRID.n_cells


def test_detection_labels_absent_is_zeros():
    record = make_record("car", [(5, 8)] * 7, present=False)
    assert np.array_equal(enc.detection_labels(record, GRID), np.zeros(7))


def test_detection_labels_inside_bbox():
    bbox = (GRID.cell_rect((2, 2))[0], GRID.cell_rect((2, 2))[1], 32.0, 32.0)
    record = make_record("car", [(5, 8), (2, 2), (0, 0)], bbox=bbox)
    assert np.array_equal(enc.detection_labels(record, GRID), [0.0, 1.0, 0.0])


def test_detection_labels_zero_area_contact_does_not_count():
    # box spanning pixel rows 64..96 ends exactly at the row-3 cell boundary
    bbox = (0.0, 64.0, 512.0, 32.0)
    record = make_record("car", [(3, 0)], bbox=bbox)
    assert enc.detection_labels(record, GRID)[0] == 0.0
    record_inside = make_record("car", [(2, 0)], bbox=bbox)
    assert enc.detection_labels(record_inside, GRID)[0] == 1.0


def test_detection_labels_malformed_bbox():
    record = make_record("car", [(2, 2)], bbox=(0.0, 0.0, -1.0, 5.0))
    with pytest.raises(ValueError):
        enc.detection_labels(record, GRID)


def test_detection_labels_present_without_bbox():
    record = make_record("car", [(2, 2)], bbox=None)
    with pytest.raises(ValueError):
        enc.detection_labels(record, GRID)
