"""Iterative shrinking of an over-budget perturbation into the target ball.

Per-position composition: positions whose delta already fits the working
radius get an affine rescale (gentle shrink plus per-cell mean recentering);
positions outside it are randomly thinned and scaled, which with the default
zero scale drops them outright.  A descending tolerance schedule temporarily
widens the working ball; each stage is checkpointed and a stage that ends
worse than its predecessor is retried once from the predecessor's image.

All pixel math rounds half away from zero so reruns are bit-stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import (
    ImageTensor,
    Perturbation,
    PixelMask,
    clamp_ball_array,
    round_half_away,
)
from .oracle import BudgetExhausted, Oracle, QueryBudget
from .patchdb import NoCandidatesError, PatchIndex
from .selection import CellPlanner, SelectionConfig, box_cell_counts, make_grid


@dataclass(frozen=True)
class ProjectionParams:
    ineligible_scale: float = 0.0
    keep_density: float = 0.5
    eligible_scale: float = 0.9
    recenter: str = "cell-mean"
    iterations: int = 40
    stage_retries: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.keep_density <= 1.0:
            raise ValueError("keep_density must lie in [0, 1]")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.stage_retries < 0:
            raise ValueError("stage_retries must be >= 0")
        if self.recenter not in ("cell-mean", "none"):
            raise ValueError(f"unknown recenter policy {self.recenter!r}")


@dataclass(frozen=True)
class ToleranceSchedule:
    """Descending ball multipliers; the final stage must be exactly 1.0."""

    stages: tuple[float, ...] = (2.0, 1.5, 1.25, 1.0)

    def __post_init__(self) -> None:
        if not self.stages:
            raise ValueError("schedule must have at least one stage")
        if any(b >= a for a, b in zip(self.stages, self.stages[1:])):
            raise ValueError("stages must be strictly decreasing")
        if self.stages[-1] != 1.0:
            raise ValueError("final stage must be 1.0")


@dataclass(frozen=True)
class Checkpoint:
    """Best queried iterate of one schedule stage."""

    image: ImageTensor
    object_count: int
    d: float
    queries_at: int


@dataclass(frozen=True)
class ManipulationResult:
    image: ImageTensor
    best: Checkpoint
    checkpoints: tuple[Checkpoint, ...]
    budget_exhausted: bool = False


def eligible_mask(delta: Perturbation, radius: int) -> PixelMask:
    """True exactly where |delta| <= radius, per channel."""
    if radius <= 0:
        raise ValueError("radius must be > 0")
    return PixelMask(np.abs(delta.data) <= radius)


def drop_ineligible(delta: Perturbation, scale: float, keep: PixelMask) -> Perturbation:
    """Elementwise scale * keep * delta, rounded; zero scale drops everything."""
    if keep.data.shape != delta.data.shape:
        raise ValueError("mask dimensions do not match the perturbation")
    out = round_half_away(scale * keep.data * delta.data.astype(np.float64))
    return Perturbation(out.astype(np.int16))


def rescale_eligible(delta: Perturbation, scale: float, offset: float) -> Perturbation:
    """Elementwise affine map scale * delta + offset, rounded, clamped to [-255, 255]."""
    out = round_half_away(scale * delta.data.astype(np.float64) + offset)
    return Perturbation(np.clip(out, -255, 255).astype(np.int16))


def project(
    delta: Perturbation,
    radius: int,
    params: ProjectionParams,
    rng: np.random.Generator,
) -> Perturbation:
    """One composition pass over a single cell's perturbation.

    Draws one uniform value per position for the thinning mask (restricted to
    currently active positions); the recenter offset is the negated mean of
    the eligible deltas under the `cell-mean` policy.
    """
    if radius <= 0:
        raise ValueError("radius must be > 0")
    return Perturbation(_project_array(delta.data, radius, params, rng, cell_size=None))


def _project_array(
    delta: np.ndarray,
    radius: int,
    params: ProjectionParams,
    rng: np.random.Generator,
    cell_size: int | None,
) -> np.ndarray:
    """Array-level projection; `cell_size` scopes the recenter means per cell."""
    delta = delta.astype(np.int16, copy=False)
    eligible = np.abs(delta) <= radius
    active = delta != 0
    keep = (rng.random(delta.shape) < params.keep_density) & active
    work = delta.astype(np.float64)
    if params.recenter == "cell-mean":
        offset = -_scoped_mean(work, eligible, cell_size)
    else:
        offset = 0.0
    shrunk = np.clip(round_half_away(params.eligible_scale * work + offset), -255, 255)
    dropped = round_half_away(params.ineligible_scale * (keep * work))
    return np.where(eligible, shrunk, dropped).astype(np.int16)


def _scoped_mean(values: np.ndarray, mask: np.ndarray, cell_size: int | None) -> np.ndarray | float:
    """Mean of masked values, either global or per grid cell (broadcastable)."""
    if cell_size is None:
        count = int(mask.sum())
        return float((values * mask).sum() / count) if count else 0.0
    h, w, _ = values.shape
    rows, cols = h // cell_size, w // cell_size
    v5 = (values * mask).reshape(rows, cell_size, cols, cell_size, 3)
    m5 = mask.reshape(rows, cell_size, cols, cell_size, 3)
    sums = v5.sum(axis=(1, 3, 4))
    counts = m5.sum(axis=(1, 3, 4))
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return np.repeat(np.repeat(means, cell_size, axis=0), cell_size, axis=1)[:, :, None]


def refine_perturbation(
    x: ImageTensor,
    x_adv: ImageTensor,
    epsilon: int,
    schedule: ToleranceSchedule,
    params: ProjectionParams,
    cfg: SelectionConfig,
    db: PatchIndex,
    oracle: Oracle,
    budget: QueryBudget,
    rng: np.random.Generator,
    trace=None,
) -> ManipulationResult:
    """Run the staged refinement loop; the returned image always fits the ball.

    Per stage: `iterations` oracle queries, each followed by per-cell repair
    (regenerate empty cells, project the rest) and a whole-image clamp to the
    stage radius.  A stage whose best count falls below its predecessor's is
    retried once from the predecessor's checkpoint image.  On budget
    exhaustion the best-so-far result is returned flagged.
    """
    if x.data.shape != x_adv.data.shape:
        raise ValueError("x and x_adv dimensions differ")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    grid = make_grid(x, cfg.cell_size)
    planner = CellPlanner(x, grid, db, cfg)
    cur = x_adv.to_array()
    checkpoints: list[Checkpoint] = []
    exhausted = False
    for d in schedule.stages:
        radius = max(1, int(np.floor(epsilon * d + 1e-9)))
        attempt = 0
        stage_best: Checkpoint | None = None
        while True:
            ckpt, cur, exhausted = _stage_pass(
                cur, x, radius, d, params, grid, planner, oracle, budget, rng, trace
            )
            if ckpt is not None and (
                stage_best is None or ckpt.object_count > stage_best.object_count
            ):
                stage_best = ckpt
            if exhausted:
                break
            prev = checkpoints[-1] if checkpoints else None
            if (
                prev is not None
                and ckpt is not None
                and ckpt.object_count < prev.object_count
                and attempt < params.stage_retries
            ):
                attempt += 1
                cur = prev.image.to_array()
                continue
            break
        if stage_best is not None:
            checkpoints.append(stage_best)
        if exhausted:
            break
    out = ImageTensor(clamp_ball_array(cur, x.data, epsilon))
    if checkpoints:
        best = max(checkpoints, key=lambda c: (c.object_count, -c.d))
    else:
        best = Checkpoint(out, 0, schedule.stages[-1], budget.used)
    return ManipulationResult(out, best, tuple(checkpoints), exhausted)


def _stage_pass(
    cur: np.ndarray,
    x: ImageTensor,
    radius: int,
    d: float,
    params: ProjectionParams,
    grid,
    planner: CellPlanner,
    oracle: Oracle,
    budget: QueryBudget,
    rng: np.random.Generator,
    trace,
) -> tuple[Checkpoint | None, np.ndarray, bool]:
    base16 = x.data.astype(np.int16)
    best: tuple[int, ImageTensor, int] | None = None
    last: tuple[int, ImageTensor, int] | None = None
    for _ in range(params.iterations):
        snapshot = ImageTensor(cur)
        try:
            dets = oracle.detect(snapshot, budget, phase="attack")
        except BudgetExhausted:
            return _to_checkpoint(best or last, d, budget), cur, True
        count = len(dets)
        delta = cur.astype(np.int16) - base16
        distance = int(np.max(np.abs(delta)))
        if trace is not None:
            trace.record(dets.query_index, "attack", count, distance, d, snapshot)
        if distance <= radius and (best is None or count > best[0]):
            best = (count, snapshot, dets.query_index)
        last = (count, snapshot, dets.query_index)
        counts = box_cell_counts(dets, grid)
        projected = _project_array(delta, radius, params, rng, cell_size=grid.cell_size)
        populated = np.repeat(
            np.repeat(counts >= 1, grid.cell_size, axis=0), grid.cell_size, axis=1
        )[:, :, None]
        cur = np.clip(base16 + np.where(populated, projected, delta), 0, 255).astype(np.uint8)
        for row, col in np.argwhere(counts < 1):
            rect = grid.cell_rect(int(col), int(row))
            try:
                tile = planner.compose(int(col), int(row), rng)
            except NoCandidatesError:
                continue
            cur[rect.y0 : rect.y1, rect.x0 : rect.x1] = tile.data
        cur = clamp_ball_array(cur, x.data, radius)
    return _to_checkpoint(best or last, d, budget), cur, False


def _to_checkpoint(
    entry: tuple[int, ImageTensor, int] | None, d: float, budget: QueryBudget
) -> Checkpoint | None:
    if entry is None:
        return None
    count, image, qidx = entry
    return Checkpoint(image=image, object_count=count, d=d, queries_at=qidx)
