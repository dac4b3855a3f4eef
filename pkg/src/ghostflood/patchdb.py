"""Harvesting and serving the stolen-object database.

Harvest feeds corpus images (and color-transformed variants) through an
oracle, crops every reported box into a patch record, and counts how many
transformed variants still recognize each base patch.  The resulting index is
persisted as a directory of PNGs plus an `index.json` carrying metadata, probe
fingerprints, a schema version and a content digest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .imagecore import (
    ColorStats,
    ImageTensor,
    RegionRect,
    TransformSpec,
    color_stats,
    color_transform,
    crop,
    load_image,
    resize,
    save_image,
)
from .oracle import BudgetExhausted, Detection, Oracle, QueryBudget, iou

SCHEMA_VERSION = 1

ROBUSTNESS_MATCH_IOU = 0.5


class EmptyHarvestError(RuntimeError):
    """The corpus produced no detections at all."""


class NoCandidatesError(LookupError):
    """No record passes the candidate score filter."""


class IndexFormatError(ValueError):
    """The on-disk index cannot be trusted."""


class IndexVersionError(IndexFormatError):
    pass


class IndexDigestError(IndexFormatError):
    pass


@dataclass(frozen=True)
class PatchRecord:
    patch: ImageTensor
    label: str
    score: float
    source_image_id: str
    source_box: RegionRect
    stats: ColorStats
    augmentation: str = "none"
    robustness: int = 0


@dataclass(frozen=True)
class ProbeFingerprint:
    """A probe image and the detections the oracle reported at harvest time."""

    image_id: str
    image: ImageTensor
    detections: tuple[Detection, ...]


@dataclass(frozen=True)
class PatchIndex:
    records: tuple[PatchRecord, ...]
    probes: tuple[ProbeFingerprint, ...]
    created_at: str
    config_digest: str
    complete: bool = True

    def __len__(self) -> int:
        return len(self.records)


def harvest(
    corpus: Sequence[str | Path],
    oracle: Oracle,
    augspec: Sequence[TransformSpec],
    budget: QueryBudget,
    rng: np.random.Generator,
    probe_count: int = 3,
) -> PatchIndex:
    """Query every corpus image and every transformed variant; crop all boxes.

    Consumes exactly len(corpus) * (1 + len(augspec)) budget units when it
    completes.  On budget exhaustion mid-way the partial index is returned
    with `complete=False`.
    """
    if not corpus:
        raise ValueError("corpus must not be empty")
    records: list[PatchRecord] = []
    probes: list[ProbeFingerprint] = []
    complete = True
    for path in corpus:
        path = Path(path)
        image_id = path.stem
        img = load_image(path)
        try:
            dets = oracle.detect(img, budget, phase="harvest")
        except BudgetExhausted:
            complete = False
            break
        base_records = [
            _make_record(img, det, image_id, augmentation="none") for det in dets.detections
        ]
        robustness = [0] * len(base_records)
        if len(probes) < probe_count:
            probes.append(ProbeFingerprint(image_id, img, dets.detections))
        aug_records: list[PatchRecord] = []
        for spec in augspec:
            variant = color_transform(img, spec, rng)
            try:
                vdets = oracle.detect(variant, budget, phase="harvest")
            except BudgetExhausted:
                complete = False
                break
            for i, rec in enumerate(base_records):
                if any(
                    det.label == rec.label and iou(det.box, rec.source_box) >= ROBUSTNESS_MATCH_IOU
                    for det in vdets.detections
                ):
                    robustness[i] += 1
            aug_records.extend(
                _make_record(variant, det, image_id, augmentation=spec.tag)
                for det in vdets.detections
            )
        records.extend(replace(rec, robustness=r) for rec, r in zip(base_records, robustness))
        records.extend(aug_records)
        if not complete:
            break
    if complete and not records:
        raise EmptyHarvestError("no detections anywhere in the corpus")
    digest_src = json.dumps(
        {
            "oracle": oracle.oracle_id,
            "augment": [s.tag for s in augspec],
            "probe_count": probe_count,
        },
        sort_keys=True,
    )
    return PatchIndex(
        records=tuple(records),
        probes=tuple(probes),
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        config_digest=hashlib.sha256(digest_src.encode()).hexdigest()[:16],
        complete=complete,
    )


def _make_record(
    img: ImageTensor, det: Detection, image_id: str, augmentation: str
) -> PatchRecord:
    return PatchRecord(
        patch=crop(img, det.box),
        label=det.label,
        score=det.score,
        source_image_id=image_id,
        source_box=det.box,
        stats=color_stats(img, det.box),
        augmentation=augmentation,
    )


def consistency_filter(index: PatchIndex, min_robustness: int) -> PatchIndex:
    """Keep records whose robustness count meets the threshold; order preserved."""
    if min_robustness < 0:
        raise ValueError("min_robustness must be >= 0")
    kept = tuple(r for r in index.records if r.robustness >= min_robustness)
    return replace(index, records=kept)


def select_candidates(
    index: PatchIndex,
    target_stats: ColorStats,
    cell_size: int,
    n: int,
    min_score: float,
    rng: np.random.Generator,
) -> list[PatchRecord]:
    """The n records closest in mean color to the target region.

    Records must pass the score filter; color distance is the mean absolute
    per-channel difference of means.  `rng` only breaks exact distance ties
    (one uniform draw per eligible record).  Returned patches are resized to
    cell_size x cell_size.
    """
    if not index.records:
        raise NoCandidatesError("index is empty")
    if n < 1:
        raise ValueError("n must be >= 1")
    eligible = [r for r in index.records if r.score >= min_score]
    if not eligible:
        raise NoCandidatesError(f"no record passes score >= {min_score}")
    target = np.asarray(target_stats.mean)
    distances = [float(np.mean(np.abs(np.asarray(r.stats.mean) - target))) for r in eligible]
    tiebreak = rng.random(len(eligible))
    order = sorted(range(len(eligible)), key=lambda i: (distances[i], tiebreak[i]))
    chosen = [eligible[i] for i in order[:n]]
    return [replace(r, patch=resize(r.patch, cell_size, cell_size)) for r in chosen]


@dataclass(frozen=True)
class DriftReport:
    changed: bool
    agreement: float
    per_probe: tuple[tuple[str, float], ...]


def probe_drift(
    index: PatchIndex,
    oracle: Oracle,
    budget: QueryBudget,
    threshold: float = 0.8,
) -> DriftReport:
    """Re-query the stored probe images and compare against the fingerprints.

    Agreement per probe is the greedy same-label IoU matching score; the
    oracle is considered changed when the mean agreement drops below the
    threshold (strict).
    """
    if not index.probes:
        raise ValueError("index has no probe fingerprints")
    per_probe = []
    for probe in index.probes:
        fresh = oracle.detect(probe.image, budget, phase="drift")
        per_probe.append((probe.image_id, _agreement(probe.detections, fresh.detections)))
    agreement = float(np.mean([a for _, a in per_probe]))
    return DriftReport(changed=agreement < threshold, agreement=agreement, per_probe=tuple(per_probe))


def _agreement(stored: tuple[Detection, ...], fresh: tuple[Detection, ...]) -> float:
    if not stored and not fresh:
        return 1.0
    pairs = [
        (iou(s.box, f.box), i, j)
        for i, s in enumerate(stored)
        for j, f in enumerate(fresh)
        if s.label == f.label
    ]
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    used_s: set[int] = set()
    used_f: set[int] = set()
    total = 0.0
    for value, i, j in pairs:
        if value <= 0.0 or i in used_s or j in used_f:
            continue
        used_s.add(i)
        used_f.add(j)
        total += value
    return total / max(len(stored), len(fresh))


def save_index(index: PatchIndex, path: str | Path) -> None:
    """Persist as a directory: index.json plus one PNG per patch and probe."""
    root = Path(path)
    (root / "patches").mkdir(parents=True, exist_ok=True)
    (root / "probes").mkdir(parents=True, exist_ok=True)
    per_source: dict[str, int] = {}
    record_docs = []
    hasher = hashlib.sha256()
    for rec in index.records:
        k = per_source.get(rec.source_image_id, 0)
        per_source[rec.source_image_id] = k + 1
        rel = f"patches/{rec.source_image_id}_{k}.png"
        save_image(rec.patch, root / rel)
        record_docs.append(
            {
                "file": rel,
                "label": rec.label,
                "score": rec.score,
                "source_image_id": rec.source_image_id,
                "source_box": _box_doc(rec.source_box),
                "stats": {"mean": list(rec.stats.mean), "std": list(rec.stats.std)},
                "augmentation": rec.augmentation,
                "robustness": rec.robustness,
            }
        )
        hasher.update(rec.patch.data.tobytes())
    probe_docs = []
    for probe in index.probes:
        rel = f"probes/{probe.image_id}.png"
        save_image(probe.image, root / rel)
        probe_docs.append(
            {
                "image_id": probe.image_id,
                "file": rel,
                "detections": [
                    {"box": _box_doc(d.box), "label": d.label, "score": d.score}
                    for d in probe.detections
                ],
            }
        )
        hasher.update(probe.image.data.tobytes())
    doc = {
        "schema_version": SCHEMA_VERSION,
        "created_at": index.created_at,
        "config_digest": index.config_digest,
        "complete": index.complete,
        "records": record_docs,
        "probes": probe_docs,
    }
    hasher.update(json.dumps(doc, sort_keys=True).encode())
    doc["content_digest"] = hasher.hexdigest()
    (root / "index.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_index(path: str | Path) -> PatchIndex:
    """Load a persisted index; verifies schema version and content digest."""
    root = Path(path)
    doc = json.loads((root / "index.json").read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise IndexVersionError(
            f"index schema {doc.get('schema_version')!r} != supported {SCHEMA_VERSION}"
        )
    stored_digest = doc.pop("content_digest", None)
    hasher = hashlib.sha256()
    records = []
    for rdoc in doc["records"]:
        patch = load_image(root / rdoc["file"])
        hasher.update(patch.data.tobytes())
        records.append(
            PatchRecord(
                patch=patch,
                label=rdoc["label"],
                score=rdoc["score"],
                source_image_id=rdoc["source_image_id"],
                source_box=RegionRect(*rdoc["source_box"]),
                stats=ColorStats(tuple(rdoc["stats"]["mean"]), tuple(rdoc["stats"]["std"])),
                augmentation=rdoc["augmentation"],
                robustness=rdoc["robustness"],
            )
        )
    probes = []
    for pdoc in doc["probes"]:
        image = load_image(root / pdoc["file"])
        hasher.update(image.data.tobytes())
        probes.append(
            ProbeFingerprint(
                image_id=pdoc["image_id"],
                image=image,
                detections=tuple(
                    Detection(RegionRect(*d["box"]), d["label"], d["score"])
                    for d in pdoc["detections"]
                ),
            )
        )
    hasher.update(json.dumps(doc, sort_keys=True).encode())
    if stored_digest != hasher.hexdigest():
        raise IndexDigestError("content digest mismatch: index corrupted or tampered")
    return PatchIndex(
        records=tuple(records),
        probes=tuple(probes),
        created_at=doc["created_at"],
        config_digest=doc["config_digest"],
        complete=doc["complete"],
    )


def _box_doc(box: RegionRect) -> list[int]:
    return [box.x0, box.y0, box.x1, box.y1]
