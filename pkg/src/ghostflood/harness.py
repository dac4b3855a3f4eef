"""Batch evaluation, report artifacts and the monetary cost model.

`run_eval` attacks every (image, config) pair, derives per-radius success
rates and query statistics, and serializes to a deterministic JSON report.
`write_report` renders the delimited table and the summary figure next to the
JSON.  Wall-clock time is kept out of the report so reruns with identical
seeds are byte-identical; cost extrapolation uses the per-query time estimate
from the pricing model instead.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attack import AttackConfig, run_attack
from .imagecore import ImageTensor, load_image
from .oracle import Oracle
from .patchdb import PatchIndex


@dataclass(frozen=True)
class PricingModel:
    per_1000_queries: float = 1.5
    per_gpu_hour: float = 2.48
    seconds_per_query: float = 1.0

    def __post_init__(self) -> None:
        if min(self.per_1000_queries, self.per_gpu_hour, self.seconds_per_query) < 0:
            raise ValueError("pricing values must be non-negative")


@dataclass(frozen=True)
class ImageOutcome:
    image_id: str
    epsilon: int
    seed: int
    baseline_count: int
    best_count: int
    increment: int
    linf: int
    queries_used: int
    trace_len: int
    success: bool
    flag: str | None = None
    error: str | None = None
    adv_image: ImageTensor | None = None  # in-memory only, never serialized

    def to_json_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "baseline_count": self.baseline_count,
            "best_count": self.best_count,
            "increment": self.increment,
            "linf": self.linf,
            "queries_used": self.queries_used,
            "trace_len": self.trace_len,
            "success": self.success,
            "flag": self.flag,
            "error": self.error,
        }


@dataclass(frozen=True)
class EvalReport:
    oracle_id: str
    config_digest: str
    budget: int
    epsilons: tuple[int, ...]
    asr: dict[int, float]
    query_stats: dict[str, float]
    outcomes: tuple[ImageOutcome, ...]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "oracle_id": self.oracle_id,
            "config_digest": self.config_digest,
            "budget": self.budget,
            "epsilons": list(self.epsilons),
            "asr": {str(e): v for e, v in sorted(self.asr.items())},
            "query_stats": self.query_stats,
            "results": [o.to_json_dict() for o in self.outcomes],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"


def per_image_seed(base_seed: int, image_id: str) -> int:
    """Config seed XOR a stable hash of the image name: adding images never
    perturbs the seeds of existing ones."""
    digest = hashlib.sha256(image_id.encode()).digest()
    return (base_seed ^ int.from_bytes(digest[:8], "big")) % (2**63)


def run_eval(
    images: list[str | Path],
    db: PatchIndex,
    cfgs: list[AttackConfig],
    oracle: Oracle,
    workers: int = 1,
) -> EvalReport:
    """One attack per (image, config); failures are recorded, never dropped.

    Results are merged in input order regardless of worker count, so the
    report is deterministic for fixed seeds.
    """
    if not images:
        raise ValueError("images must not be empty")
    if not cfgs:
        raise ValueError("cfgs must not be empty")
    paths = [Path(p) for p in images]
    jobs = [
        (path.stem, path, cfg)
        for path in paths
        for cfg in cfgs
    ]

    def attack_one(job: tuple[str, Path, AttackConfig]) -> ImageOutcome:
        image_id, path, cfg = job
        seed = per_image_seed(cfg.seed, image_id)
        try:
            image = load_image(path)
            result = run_attack(image, db, _with_seed(cfg, seed), oracle)
            return ImageOutcome(
                image_id=image_id,
                epsilon=cfg.epsilon,
                seed=seed,
                baseline_count=result.baseline_count,
                best_count=result.best_count,
                increment=result.increment,
                linf=result.linf,
                queries_used=result.queries_used,
                trace_len=len(result.trace),
                success=result.success,
                flag=result.flag,
                adv_image=result.adv_image,
            )
        except Exception as exc:  # per-image failures surface in the report
            return ImageOutcome(
                image_id=image_id,
                epsilon=cfg.epsilon,
                seed=seed,
                baseline_count=0,
                best_count=0,
                increment=0,
                linf=0,
                queries_used=0,
                trace_len=0,
                success=False,
                error=f"{type(exc).__name__}: {exc}",
            )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(attack_one, jobs))
    else:
        outcomes = [attack_one(job) for job in jobs]

    epsilons = tuple(sorted({cfg.epsilon for cfg in cfgs}))
    asr = aggregate_asr(outcomes)
    used = [o.queries_used for o in outcomes]
    query_stats = {
        "mean": float(np.mean(used)),
        "median": float(np.median(used)),
        "max": int(np.max(used)),
        "total": int(np.sum(used)),
    }
    digest_src = json.dumps([c.to_json_dict() for c in cfgs], sort_keys=True)
    return EvalReport(
        oracle_id=oracle.oracle_id,
        config_digest=hashlib.sha256(digest_src.encode()).hexdigest()[:16],
        budget=max(c.max_queries for c in cfgs),
        epsilons=epsilons,
        asr=asr,
        query_stats=query_stats,
        outcomes=tuple(outcomes),
    )


def _with_seed(cfg: AttackConfig, seed: int) -> AttackConfig:
    from dataclasses import replace

    return replace(cfg, seed=seed)


def aggregate_asr(outcomes) -> dict[int, float]:
    """Success ratio per radius: successes over total attempts (errors count)."""
    asr: dict[int, float] = {}
    for eps in sorted({o.epsilon for o in outcomes}):
        group = [o for o in outcomes if o.epsilon == eps]
        asr[eps] = sum(o.success for o in group) / len(group)
    return asr


@dataclass(frozen=True)
class CostBreakdown:
    total_queries: int
    api_cost: float
    gpu_hours: float
    gpu_cost: float
    cheaper: str

    def to_json_dict(self) -> dict:
        return {
            "total_queries": self.total_queries,
            "api_cost": self.api_cost,
            "gpu_hours": self.gpu_hours,
            "gpu_cost": self.gpu_cost,
            "cheaper": self.cheaper,
        }


def estimate_cost(report: EvalReport, pricing: PricingModel) -> CostBreakdown:
    """API cost versus renting a GPU for the estimated wall time.

    The wall time is total queries times the per-query estimate; the cheaper
    deployment path is flagged.
    """
    total = int(report.query_stats["total"])
    api_cost = total / 1000.0 * pricing.per_1000_queries
    gpu_hours = total * pricing.seconds_per_query / 3600.0
    gpu_cost = gpu_hours * pricing.per_gpu_hour
    cheaper = "local-gpu" if gpu_cost < api_cost else "api"
    return CostBreakdown(total, api_cost, gpu_hours, gpu_cost, cheaper)


def write_report(report: EvalReport, json_path: str | Path) -> dict[str, Path]:
    """Write report.json plus the delimited ASR table and the summary figure.

    Returns the artifact paths keyed by kind (json, csv, png).
    """
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(report.to_json())
    csv_path = json_path.with_suffix(".csv")
    header = ["oracle_id"] + [f"eps_{e}" for e in report.epsilons]
    row = [report.oracle_id] + [f"{report.asr[e]:.4f}" for e in report.epsilons]
    csv_path.write_text(",".join(header) + "\n" + ",".join(row) + "\n")
    png_path = json_path.with_suffix(".png")
    _plot_asr(report, png_path)
    return {"json": json_path, "csv": csv_path, "png": png_path}


def load_report(path: str | Path) -> EvalReport:
    """Read back a serialized report (adversarial images are not stored)."""
    doc = json.loads(Path(path).read_text())
    outcomes = tuple(
        ImageOutcome(
            image_id=r["image_id"],
            epsilon=r["epsilon"],
            seed=r["seed"],
            baseline_count=r["baseline_count"],
            best_count=r["best_count"],
            increment=r["increment"],
            linf=r["linf"],
            queries_used=r["queries_used"],
            trace_len=r["trace_len"],
            success=r["success"],
            flag=r.get("flag"),
            error=r.get("error"),
        )
        for r in doc["results"]
    )
    return EvalReport(
        oracle_id=doc["oracle_id"],
        config_digest=doc["config_digest"],
        budget=doc["budget"],
        epsilons=tuple(doc["epsilons"]),
        asr={int(k): v for k, v in doc["asr"].items()},
        query_stats=doc["query_stats"],
        outcomes=outcomes,
    )


def _plot_asr(report: EvalReport, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    eps = list(report.epsilons)
    ax.plot(eps, [report.asr[e] for e in eps], marker="o", color="#7a1f1f")
    ax.set_xlabel("ball radius")
    ax.set_ylabel("attack success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.set_xticks(eps)
    ax.grid(True, alpha=0.3)
    ax.set_title(f"{report.oracle_id}: ASR vs radius")
    fig.tight_layout()
    # strip the encoder tag so reruns produce identical bytes
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
