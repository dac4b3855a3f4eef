import numpy as np
import pytest

from ghostflood.imagecore import ColorStats, ImageTensor, RegionRect, color_stats, resize
from ghostflood.mock import MockDetectorConfig, mock_detect
from ghostflood.oracle import BudgetExhausted, Detection, DetectionSet, QueryBudget
from ghostflood.selection import (
    SelectionConfig,
    box_cell_counts,
    cell_box_count,
    compose_cell_patch,
    make_grid,
    populate_cells,
)
from ghostflood.synthetic import make_target


def blank(size=640, value=128):
    return ImageTensor(np.full((size, size, 3), value, dtype=np.uint8))


def det(x0, y0, x1, y1, label="a", score=0.9):
    return Detection(RegionRect(x0, y0, x1, y1), label, score)


class TestGrid:
    def test_640_by_64(self):
        grid = make_grid(blank(), 64)
        assert (grid.cols, grid.rows) == (10, 10)

    def test_single_cell(self):
        grid = make_grid(blank(), 640)
        assert (grid.cols, grid.rows) == (1, 1)

    def test_non_divisible_rejected(self):
        with pytest.raises(ValueError):
            make_grid(blank(), 100)

    def test_cell_rect(self):
        grid = make_grid(blank(), 64)
        rect = grid.cell_rect(2, 3)
        assert (rect.x0, rect.y0, rect.x1, rect.y1) == (128, 192, 192, 256)


class TestBoxCellCounts:
    def test_empty_detections(self):
        grid = make_grid(blank(), 64)
        counts = box_cell_counts(DetectionSet((), "t"), grid)
        assert counts.sum() == 0
        assert cell_box_count(DetectionSet((), "t"), grid, 4, 4) == 0

    def test_single_box_lands_in_one_cell(self):
        grid = make_grid(blank(), 64)
        # center (160, 224) -> cell col 2, row 3
        dets = DetectionSet((det(150, 214, 170, 234),), "t")
        counts = box_cell_counts(dets, grid)
        assert counts[3, 2] == 1
        assert counts.sum() == 1
        assert cell_box_count(dets, grid, 2, 3) == 1
        assert cell_box_count(dets, grid, 3, 2) == 0

    def test_partition_matches_brute_force(self):
        rng = np.random.default_rng(0)
        grid = make_grid(blank(), 64)
        for _ in range(30):
            boxes = []
            for _ in range(200):
                x0, y0 = rng.integers(0, 600, 2)
                w, h = rng.integers(1, 40, 2)
                boxes.append(det(int(x0), int(y0), int(x0 + w), int(y0 + h)))
            dets = DetectionSet(tuple(boxes), "t")
            counts = box_cell_counts(dets, grid)
            assert counts.sum() == 200
            brute = np.zeros((10, 10), dtype=int)
            for d in boxes:
                cx, cy = d.box.center
                col = min(int(cx // 64), 9)
                row = min(int(cy // 64), 9)
                brute[row, col] += 1
            assert np.array_equal(counts, brute)

    def test_out_of_range_cell(self):
        grid = make_grid(blank(), 64)
        with pytest.raises(IndexError):
            cell_box_count(DetectionSet((), "t"), grid, 10, 0)


class TestComposeCellPatch:
    def test_singleton_db_fills_cell_with_resized_record(self, patch_index):
        from dataclasses import replace

        single = replace(patch_index, records=patch_index.records[:1])
        cfg = SelectionConfig()
        cell = RegionRect(0, 0, 64, 64)
        stats = ColorStats((128.0, 128.0, 128.0), (0.0, 0.0, 0.0))
        # seed chosen so the optional color transform does not fire
        tile = compose_cell_patch(cell, single, stats, cfg, np.random.default_rng(2))
        expected = resize(patch_index.records[0].patch, 64, 64)
        assert tile == expected

    def test_deterministic(self, patch_index):
        cfg = SelectionConfig()
        cell = RegionRect(64, 64, 128, 128)
        stats = ColorStats((100.0, 90.0, 80.0), (0.0, 0.0, 0.0))
        a = compose_cell_patch(cell, patch_index, stats, cfg, np.random.default_rng(3))
        b = compose_cell_patch(cell, patch_index, stats, cfg, np.random.default_rng(3))
        assert a == b

    def test_composite_tile_is_detectable(self, patch_index, library):
        # whatever the composition draws, the mock still reports an object
        cfg = SelectionConfig()
        cell = RegionRect(0, 0, 64, 64)
        stats = ColorStats((128.0, 128.0, 128.0), (0.0, 0.0, 0.0))
        mock_cfg = MockDetectorConfig(templates=library)
        hits = 0
        for seed in range(8):
            tile = compose_cell_patch(cell, patch_index, stats, cfg, np.random.default_rng(seed))
            hits += bool(len(mock_detect(tile, mock_cfg)))
        assert hits >= 7  # occasional heavy transform may blur one below threshold

    def test_wrong_cell_size_rejected(self, patch_index):
        cfg = SelectionConfig()
        with pytest.raises(ValueError):
            compose_cell_patch(
                RegionRect(0, 0, 32, 64), patch_index,
                ColorStats((0, 0, 0), (0, 0, 0)), cfg, np.random.default_rng(0),
            )


class _StaticOracle:
    """Always returns the same detections, whatever the image."""

    oracle_id = "static"

    def __init__(self, detections):
        self._dets = tuple(detections)

    def detect(self, image, budget, phase="query"):
        index = budget.charge(phase)
        return DetectionSet(self._dets, self.oracle_id, index)


class TestPopulateCells:
    def test_zero_threshold_leaves_image_untouched(self, patch_index):
        # an oracle reporting one object per cell, and a threshold of 0,
        # means nothing ever qualifies for replacement
        grid_dets = tuple(
            det(col * 64 + 20, row * 64 + 20, col * 64 + 40, row * 64 + 40)
            for col in range(10)
            for row in range(10)
        )
        oracle = _StaticOracle(grid_dets)
        cfg = SelectionConfig(count_threshold=0, trials=3)
        x = blank()
        out, cells = populate_cells(
            x, cfg, patch_index, oracle, QueryBudget(100), np.random.default_rng(0)
        )
        assert out == x
        assert all(c.object_count == 1 for row in cells for c in row)

    def test_blank_target_every_cell_replaced(self, patch_index, detector):
        cfg = SelectionConfig(trials=3)
        x = blank()
        budget = QueryBudget(100)
        out, cells = populate_cells(
            x, cfg, patch_index, detector, budget, np.random.default_rng(0), epsilon=32
        )
        assert budget.used == 3
        # final oracle query must report objects in at least half the cells
        final = detector._detect_image(out)
        counts = box_cell_counts(
            DetectionSet(final, "m"), make_grid(x, 64)
        )
        assert (counts >= 1).sum() >= 50

    def test_budget_equal_to_trials_completes(self, patch_index, detector):
        cfg = SelectionConfig(trials=4)
        budget = QueryBudget(4)
        populate_cells(
            blank(320), cfg, patch_index, detector, budget, np.random.default_rng(0)
        )
        assert budget.used == 4

    def test_budget_exhaustion_propagates(self, patch_index, detector):
        cfg = SelectionConfig(trials=5)
        with pytest.raises(BudgetExhausted):
            populate_cells(
                blank(320), cfg, patch_index, detector, QueryBudget(2), np.random.default_rng(0)
            )

    def test_replacement_locality(self, patch_index, library, detector):
        # plant real patterns: their cells always count >= 1 and stay pristine
        arr = np.full((320, 320, 3), 128, dtype=np.uint8)
        arr[0:64, 0:64] = library[1].pattern.data
        arr[128:192, 192:256] = library[3].pattern.data
        x = ImageTensor(arr)
        cfg = SelectionConfig(trials=3)
        out, cells = populate_cells(
            x, cfg, patch_index, detector, QueryBudget(10), np.random.default_rng(1)
        )
        assert np.array_equal(out.data[0:64, 0:64], x.data[0:64, 0:64])
        assert np.array_equal(out.data[128:192, 192:256], x.data[128:192, 192:256])

    def test_fixed_seed_reproducible(self, patch_index, detector):
        cfg = SelectionConfig(trials=3)
        x = make_target(size=320, noise_sigma=10, seed=5)
        a, _ = populate_cells(
            x, cfg, patch_index, detector, QueryBudget(10), np.random.default_rng(7), epsilon=32
        )
        b, _ = populate_cells(
            x, cfg, patch_index, detector, QueryBudget(10), np.random.default_rng(7), epsilon=32
        )
        assert a == b

    def test_cell_state_invariants(self, patch_index, detector):
        cfg = SelectionConfig(trials=3)
        x = make_target(size=320, noise_sigma=5, seed=6)
        _, cells = populate_cells(
            x, cfg, patch_index, detector, QueryBudget(10), np.random.default_rng(2), epsilon=32
        )
        for row in cells:
            for cell in row:
                if cell.object_count == 0:
                    assert not cell.eligible
                if cell.eligible:
                    assert cell.color_distance <= 32 and cell.object_count >= 1

    def test_empty_db_rejected(self, patch_index, detector):
        from dataclasses import replace

        empty = replace(patch_index, records=())
        with pytest.raises(ValueError):
            populate_cells(
                blank(320), SelectionConfig(), empty, detector, QueryBudget(10),
                np.random.default_rng(0),
            )
