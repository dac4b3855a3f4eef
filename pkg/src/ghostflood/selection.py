"""Grid-cell seeding: decide where candidate objects go by watching cells.

The target image is tiled by a square grid.  Over a fixed number of trials,
each trial queries the oracle once, counts reported boxes per cell by box
center, and rebuilds under-populated cells from database candidates (with a
small probability of restoring the original content instead).  No ball
constraint applies here; the output is an over-perturbed starting point whose
cells carry externally sourced objects.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .imagecore import (
    ColorStats,
    ImageTensor,
    PixelMask,
    RegionRect,
    TransformSpec,
    color_stats,
    color_transform,
    paste_patch,
    resize,
)
from .oracle import DetectionSet, Oracle, QueryBudget
from .patchdb import NoCandidatesError, PatchIndex, PatchRecord, select_candidates

TILE_TRANSFORM_PROBABILITY = 0.25
OVERLAY_FRACTION = 3 / 8


@dataclass(frozen=True)
class Grid:
    """Exact square tiling of an image: cell_size * cols == width, likewise rows."""

    cell_size: int
    cols: int
    rows: int

    def cell_rect(self, col: int, row: int) -> RegionRect:
        if not (0 <= col < self.cols and 0 <= row < self.rows):
            raise IndexError(f"cell ({col}, {row}) outside {self.cols}x{self.rows} grid")
        s = self.cell_size
        return RegionRect(col * s, row * s, (col + 1) * s, (row + 1) * s)


@dataclass(frozen=True)
class SelectionConfig:
    cell_size: int = 64
    count_threshold: int = 1
    trials: int = 10
    revert_probability: float = 0.1
    min_score: float = 0.3
    candidate_pool: int = 8

    def __post_init__(self) -> None:
        if not 0.0 <= self.revert_probability <= 1.0:
            raise ValueError("revert_probability must lie in [0, 1]")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.count_threshold < 0:
            raise ValueError("count_threshold must be >= 0")
        if self.cell_size < 1 or self.candidate_pool < 1:
            raise ValueError("cell_size and candidate_pool must be >= 1")


@dataclass(frozen=True)
class CellState:
    """Best content observed for one cell across the trials."""

    patch: ImageTensor
    object_count: int
    color_distance: int
    active_pixels: PixelMask
    eligible: bool


def make_grid(img: ImageTensor, cell_size: int) -> Grid:
    """Grid tiling the image exactly; cell_size must divide both dimensions."""
    if cell_size < 1:
        raise ValueError("cell_size must be >= 1")
    if img.width % cell_size or img.height % cell_size:
        raise ValueError(
            f"cell size {cell_size} does not divide image {img.height}x{img.width}"
        )
    return Grid(cell_size, img.width // cell_size, img.height // cell_size)


def cell_box_count(dets: DetectionSet, grid: Grid, col: int, row: int) -> int:
    """Number of detections whose box center falls in cell (col, row).

    Centers use half-open cell intervals, so every detection lands in exactly
    one cell and per-cell counts always sum to the total.
    """
    if not (0 <= col < grid.cols and 0 <= row < grid.rows):
        raise IndexError(f"cell ({col}, {row}) outside grid")
    return int(box_cell_counts(dets, grid)[row, col])


def box_cell_counts(dets: DetectionSet, grid: Grid) -> np.ndarray:
    """(rows, cols) array of per-cell detection counts by box-center membership."""
    counts = np.zeros((grid.rows, grid.cols), dtype=np.int64)
    if not dets.detections:
        return counts
    cx = np.array([d.box.center[0] for d in dets.detections])
    cy = np.array([d.box.center[1] for d in dets.detections])
    cols = np.clip((cx // grid.cell_size).astype(np.int64), 0, grid.cols - 1)
    rows = np.clip((cy // grid.cell_size).astype(np.int64), 0, grid.rows - 1)
    np.add.at(counts, (rows, cols), 1)
    return counts


def compose_cell_patch(
    cell: RegionRect,
    db: PatchIndex,
    target_stats: ColorStats,
    cfg: SelectionConfig,
    rng: np.random.Generator,
) -> ImageTensor:
    """Build a cell-sized tile from 1-3 color-matched database candidates.

    The first candidate fills the tile; extras are pasted as smaller overlays.
    A color transform is applied with a small probability.  Deterministic
    given the rng state.
    """
    if cell.width != cell.height or cell.width != cfg.cell_size:
        raise ValueError(f"cell {cell} does not match cell_size {cfg.cell_size}")
    pool = select_candidates(
        db, target_stats, cfg.cell_size, cfg.candidate_pool, cfg.min_score, rng
    )
    return _compose_from_pool(pool, cfg.cell_size, rng)


def _compose_from_pool(
    pool: list[PatchRecord], cell_size: int, rng: np.random.Generator
) -> ImageTensor:
    count = min(int(rng.integers(1, 4)), len(pool))
    picks = rng.choice(len(pool), size=count, replace=False)
    tile = pool[int(picks[0])].patch
    overlay = max(1, round(cell_size * OVERLAY_FRACTION))
    for idx in picks[1:]:
        small = resize(pool[int(idx)].patch, overlay, overlay)
        y = int(rng.integers(0, cell_size - overlay + 1))
        x = int(rng.integers(0, cell_size - overlay + 1))
        tile = paste_patch(tile, small, RegionRect(x, y, x + overlay, y + overlay))
    if rng.random() < TILE_TRANSFORM_PROBABILITY:
        kind = int(rng.integers(0, 3))
        if kind == 0:
            spec = TransformSpec("jitter", brightness=0.15, contrast=0.15)
        elif kind == 1:
            spec = TransformSpec("posterize", bits=int(rng.integers(4, 8)))
        else:
            spec = TransformSpec("equalize")
        tile = color_transform(tile, spec, rng)
    return tile


class CellPlanner:
    """Per-attack cache of cell geometry, color stats and candidate pools.

    Pools are ranked by color distance with ties broken by record order, so a
    planner is deterministic without consuming generator state.
    """

    def __init__(self, x: ImageTensor, grid: Grid, db: PatchIndex, cfg: SelectionConfig):
        self.grid = grid
        self.cfg = cfg
        self._db = db
        self._stats: dict[tuple[int, int], ColorStats] = {}
        self._pools: dict[tuple[int, int], list[PatchRecord]] = {}
        self._x = x
        self._eligible = [r for r in db.records if r.score >= cfg.min_score]

    def stats(self, col: int, row: int) -> ColorStats:
        key = (col, row)
        if key not in self._stats:
            self._stats[key] = color_stats(self._x, self.grid.cell_rect(col, row))
        return self._stats[key]

    def pool(self, col: int, row: int) -> list[PatchRecord]:
        key = (col, row)
        cached = self._pools.get(key)
        if cached is not None:
            return cached
        if not self._eligible:
            raise NoCandidatesError(f"no record passes score >= {self.cfg.min_score}")
        target = np.asarray(self.stats(col, row).mean)
        ranked = sorted(
            range(len(self._eligible)),
            key=lambda i: (
                float(np.mean(np.abs(np.asarray(self._eligible[i].stats.mean) - target))),
                i,
            ),
        )
        pool = [
            replace(
                self._eligible[i],
                patch=resize(self._eligible[i].patch, self.cfg.cell_size, self.cfg.cell_size),
            )
            for i in ranked[: self.cfg.candidate_pool]
        ]
        self._pools[key] = pool
        return pool

    def compose(self, col: int, row: int, rng: np.random.Generator) -> ImageTensor:
        return _compose_from_pool(self.pool(col, row), self.cfg.cell_size, rng)


def populate_cells(
    x: ImageTensor,
    cfg: SelectionConfig,
    db: PatchIndex,
    oracle: Oracle,
    budget: QueryBudget,
    rng: np.random.Generator,
    epsilon: int | None = None,
    trace=None,
) -> tuple[ImageTensor, list[list[CellState]]]:
    """Run the trial loop; returns the seeded image and per-cell bookkeeping.

    Performs exactly cfg.trials oracle queries.  The returned image assembles,
    per cell, the best content observed across trials (max object count, ties
    to the smallest color distance), so cells never chosen for replacement
    stay identical to `x`.  `epsilon`, when given, marks the eligibility flag
    on each CellState.
    """
    if not db.records:
        raise ValueError("patch database is empty")
    grid = make_grid(x, cfg.cell_size)
    planner = CellPlanner(x, grid, db, cfg)
    base = x.data.astype(np.int16)
    cur = x.to_array()
    # per cell: (object_count, color_distance, content array); trial 1 always updates
    blank = np.zeros((cfg.cell_size, cfg.cell_size, 3), dtype=np.uint8)
    best: list[list[tuple[int, int, np.ndarray]]] = [
        [(-1, 0, blank) for _ in range(grid.cols)] for _ in range(grid.rows)
    ]
    for _ in range(cfg.trials):
        snapshot = ImageTensor(cur)
        dets = oracle.detect(snapshot, budget, phase="selection")
        counts = box_cell_counts(dets, grid)
        if trace is not None:
            distance = int(np.max(np.abs(cur.astype(np.int16) - base)))
            trace.record(dets.query_index, "selection", len(dets), distance, None, snapshot)
        for row in range(grid.rows):
            for col in range(grid.cols):
                rect = grid.cell_rect(col, row)
                content = cur[rect.y0 : rect.y1, rect.x0 : rect.x1]
                dist = int(
                    np.max(np.abs(content.astype(np.int16) - base[rect.y0 : rect.y1, rect.x0 : rect.x1]))
                )
                count = int(counts[row, col])
                prev = best[row][col]
                if count > prev[0] or (count == prev[0] and dist < prev[1]):
                    best[row][col] = (count, dist, content.copy())
                if count < cfg.count_threshold:
                    if rng.random() < cfg.revert_probability:
                        cur[rect.y0 : rect.y1, rect.x0 : rect.x1] = x.data[
                            rect.y0 : rect.y1, rect.x0 : rect.x1
                        ]
                    else:
                        try:
                            tile = planner.compose(col, row, rng)
                        except NoCandidatesError:
                            continue
                        cur[rect.y0 : rect.y1, rect.x0 : rect.x1] = tile.data
    out = x.to_array()
    cells: list[list[CellState]] = []
    for row in range(grid.rows):
        cell_row = []
        for col in range(grid.cols):
            count, dist, content = best[row][col]
            count = max(count, 0)
            rect = grid.cell_rect(col, row)
            out[rect.y0 : rect.y1, rect.x0 : rect.x1] = content
            active = content.astype(np.int16) != base[rect.y0 : rect.y1, rect.x0 : rect.x1]
            eligible = count >= 1 and epsilon is not None and dist <= epsilon
            cell_row.append(
                CellState(
                    patch=ImageTensor(content),
                    object_count=count,
                    color_distance=dist,
                    active_pixels=PixelMask(active),
                    eligible=eligible,
                )
            )
        cells.append(cell_row)
    return ImageTensor(out), cells
