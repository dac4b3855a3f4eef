"""Per-target attack orchestration: baseline, seeding, refinement, election.

One attack owns one query budget and one seeded generator.  Every oracle
query lands in the trace as {query_index, phase, object_count, linf, d}; the
returned adversarial image is the queried iterate with the highest object
count among those inside the ball, re-verified independently at the end.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imagecore import ImageTensor, linf_distance
from .oracle import BudgetExhausted, Oracle, QueryBudget
from .patchdb import PatchIndex
from .projection import ProjectionParams, ToleranceSchedule, refine_perturbation
from .selection import SelectionConfig, populate_cells


@dataclass(frozen=True)
class AttackConfig:
    epsilon: int
    max_queries: int = 4000
    success_increment: int = 20
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    projection: ProjectionParams = field(default_factory=ProjectionParams)
    schedule: ToleranceSchedule = field(default_factory=ToleranceSchedule)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.max_queries < self.selection.trials + 1:
            raise ValueError("max_queries must cover selection trials plus the baseline")

    def to_json_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "max_queries": self.max_queries,
            "success_increment": self.success_increment,
            "seed": self.seed,
            "selection": {
                "cell_size": self.selection.cell_size,
                "count_threshold": self.selection.count_threshold,
                "trials": self.selection.trials,
                "revert_probability": self.selection.revert_probability,
                "min_score": self.selection.min_score,
                "candidate_pool": self.selection.candidate_pool,
            },
            "projection": {
                "ineligible_scale": self.projection.ineligible_scale,
                "keep_density": self.projection.keep_density,
                "eligible_scale": self.projection.eligible_scale,
                "recenter": self.projection.recenter,
                "iterations": self.projection.iterations,
                "stage_retries": self.projection.stage_retries,
            },
            "schedule": list(self.schedule.stages),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "AttackConfig":
        kwargs = {
            k: doc[k]
            for k in ("epsilon", "max_queries", "success_increment", "seed")
            if k in doc
        }
        if "selection" in doc:
            kwargs["selection"] = SelectionConfig(**doc["selection"])
        if "projection" in doc:
            kwargs["projection"] = ProjectionParams(**doc["projection"])
        if "schedule" in doc:
            kwargs["schedule"] = ToleranceSchedule(tuple(doc["schedule"]))
        return cls(**kwargs)


class AttackTrace:
    """Per-query log plus the running election of the best in-ball iterate.

    A record is kept for every oracle query; iterates whose measured distance
    fits the ball compete on object count (earliest query wins ties).
    """

    def __init__(self, epsilon: int) -> None:
        self.epsilon = epsilon
        self.records: list[dict] = []
        self.best_count: int = -1
        self.best_image: ImageTensor | None = None
        self.best_query: int | None = None

    def record(
        self,
        query_index: int,
        phase: str,
        object_count: int,
        linf: int,
        d: float | None,
        image: ImageTensor | None = None,
    ) -> None:
        self.records.append(
            {
                "query_index": query_index,
                "phase": phase,
                "object_count": object_count,
                "linf": linf,
                "d": d,
            }
        )
        if image is not None and linf <= self.epsilon and object_count > self.best_count:
            self.best_count = object_count
            self.best_image = image
            self.best_query = query_index


@dataclass(frozen=True)
class AttackResult:
    adv_image: ImageTensor
    baseline_count: int
    best_count: int
    increment: int
    queries_used: int
    success: bool
    trace: tuple[dict, ...]
    wall_time: float
    linf: int
    epsilon: int
    flag: str | None = None


def run_attack(x: ImageTensor, db: PatchIndex, cfg: AttackConfig, oracle: Oracle) -> AttackResult:
    """Full pipeline on one target; never exceeds cfg.max_queries."""
    if not db.records:
        raise ValueError("patch database is empty")
    started = time.perf_counter()
    budget = QueryBudget(cfg.max_queries)
    rng = np.random.default_rng(cfg.seed)
    trace = AttackTrace(cfg.epsilon)
    flag: str | None = None
    baseline_count = 0
    try:
        base_dets = oracle.detect(x, budget, phase="baseline")
        baseline_count = len(base_dets)
        trace.record(base_dets.query_index, "baseline", baseline_count, 0, None, x)
        x_init, _cells = populate_cells(
            x, cfg.selection, db, oracle, budget, rng, epsilon=cfg.epsilon, trace=trace
        )
        refined = refine_perturbation(
            x,
            x_init,
            cfg.epsilon,
            cfg.schedule,
            cfg.projection,
            cfg.selection,
            db,
            oracle,
            budget,
            rng,
            trace=trace,
        )
        if refined.budget_exhausted:
            flag = "budget"
        elif budget.remaining > 0:
            final = oracle.detect(refined.image, budget, phase="final")
            trace.record(
                final.query_index,
                "final",
                len(final),
                linf_distance(refined.image, x),
                None,
                refined.image,
            )
    except BudgetExhausted:
        flag = "budget"
    adv = trace.best_image if trace.best_image is not None else x
    best_count = max(trace.best_count, 0)
    increment = best_count - baseline_count
    distance = linf_distance(adv, x)
    success = increment > cfg.success_increment and distance <= cfg.epsilon
    return AttackResult(
        adv_image=adv,
        baseline_count=baseline_count,
        best_count=best_count,
        increment=increment,
        queries_used=budget.used,
        success=success,
        trace=tuple(trace.records),
        wall_time=time.perf_counter() - started,
        linf=distance,
        epsilon=cfg.epsilon,
        flag=flag,
    )


def is_success(result: AttackResult, cfg: AttackConfig, original: ImageTensor | None = None) -> bool:
    """Strict success predicate: increment above threshold and image in-ball.

    When `original` is given the distance is recomputed from pixels instead of
    trusting the stored value.
    """
    distance = result.linf if original is None else linf_distance(result.adv_image, original)
    return result.increment > cfg.success_increment and distance <= cfg.epsilon


def write_trace_jsonl(result: AttackResult, path: str | Path) -> None:
    """One JSON line per oracle query."""
    with open(path, "w") as fh:
        for rec in result.trace:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
