"""The opaque detector boundary: detections, query budgets, NMS, wire client.

The only information an attack ever sees is the detection list an oracle
returns.  Budgets are charged client-side, before any compute or network
call, so exhaustion can never leak an extra query.
"""

from __future__ import annotations

import base64
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
import requests

from .imagecore import ImageTensor, RegionRect, encode_png


class BudgetExhausted(RuntimeError):
    """Raised when a detect call would exceed the query budget."""


class OracleTransportError(RuntimeError):
    """Network-level failure talking to a remote oracle."""


class ProtocolError(RuntimeError):
    """The remote oracle answered with a malformed or non-conforming body."""


@dataclass(frozen=True)
class Detection:
    """One reported object: box in pixel coordinates, category label, confidence."""

    box: RegionRect
    label: str
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class DetectionSet:
    """Ordered detections from a single oracle query."""

    detections: tuple[Detection, ...]
    oracle_id: str
    query_index: int = 0

    def __len__(self) -> int:
        return len(self.detections)


class QueryBudget:
    """Thread-safe query counter with per-phase tallies.

    `used` never decreases and always equals the sum of the phase tallies;
    charging past `max_queries` raises before the caller can issue the query.
    """

    def __init__(self, max_queries: int = 4000) -> None:
        if max_queries < 0:
            raise ValueError("max_queries must be >= 0")
        self.max_queries = max_queries
        self._used = 0
        self._phases: dict[str, int] = {}
        self._lock = threading.Lock()

    @property
    def used(self) -> int:
        return self._used

    @property
    def remaining(self) -> int:
        return self.max_queries - self._used

    def phase_tally(self) -> dict[str, int]:
        with self._lock:
            return dict(self._phases)

    def charge(self, phase: str = "query") -> int:
        """Consume one unit; returns the 1-based query index."""
        with self._lock:
            if self._used >= self.max_queries:
                raise BudgetExhausted(f"budget of {self.max_queries} queries exhausted")
            self._used += 1
            self._phases[phase] = self._phases.get(phase, 0) + 1
            return self._used


def iou(a: RegionRect, b: RegionRect) -> float:
    """Intersection over union of two half-open rectangles."""
    ix = min(a.x1, b.x1) - max(a.x0, b.x0)
    iy = min(a.y1, b.y1) - max(a.y0, b.y0)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / float(a.area + b.area - inter)


def nms(dets: DetectionSet, iou_threshold: float) -> DetectionSet:
    """Greedy score-descending suppression.

    Ties are broken by (score desc, x0 asc, y0 asc); retained boxes pairwise
    satisfy IoU <= threshold against every higher-ranked retained box.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in [0, 1]")
    items = dets.detections
    if len(items) <= 1:
        return dets
    x0 = np.array([d.box.x0 for d in items], dtype=np.float64)
    y0 = np.array([d.box.y0 for d in items], dtype=np.float64)
    x1 = np.array([d.box.x1 for d in items], dtype=np.float64)
    y1 = np.array([d.box.y1 for d in items], dtype=np.float64)
    scores = np.array([d.score for d in items], dtype=np.float64)
    order = np.lexsort((y0, x0, -scores))
    x0, y0, x1, y1 = x0[order], y0[order], x1[order], y1[order]
    areas = (x1 - x0) * (y1 - y0)
    alive = np.ones(len(order), dtype=bool)
    kept: list[int] = []
    for i in range(len(order)):
        if not alive[i]:
            continue
        kept.append(i)
        rest = np.flatnonzero(alive[i + 1 :]) + i + 1
        if rest.size == 0:
            continue
        iw = np.minimum(x1[i], x1[rest]) - np.maximum(x0[i], x0[rest])
        ih = np.minimum(y1[i], y1[rest]) - np.maximum(y0[i], y0[rest])
        inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
        overlap = inter / (areas[i] + areas[rest] - inter)
        alive[rest[overlap > iou_threshold]] = False
    return DetectionSet(
        tuple(items[order[i]] for i in kept), dets.oracle_id, dets.query_index
    )


class Oracle(ABC):
    """A black-box detector. Subclasses implement the raw image -> detections call."""

    oracle_id: str = "oracle"

    @abstractmethod
    def _detect_image(self, image: ImageTensor) -> tuple[Detection, ...]:
        ...

    def detect(self, image: ImageTensor, budget: QueryBudget, phase: str = "query") -> DetectionSet:
        """Charge one budget unit, then query. Raises BudgetExhausted without querying."""
        index = budget.charge(phase)
        return DetectionSet(self._detect_image(image), self.oracle_id, index)


class HttpOracle(Oracle):
    """Client for the local-wire detect protocol (POST /v1/detect, JSON bodies)."""

    def __init__(self, base_url: str, timeout: float = 30.0, min_score: float | None = None) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.min_score = min_score
        self._local = threading.local()
        info = self._get("/v1/info")
        self.oracle_id = str(info.get("model_id", "remote"))
        self.input_size = tuple(info.get("input_size", ())) or None

    def _session(self) -> requests.Session:
        sess = getattr(self._local, "session", None)
        if sess is None:
            sess = requests.Session()
            self._local.session = sess
        return sess

    def _get(self, route: str) -> dict:
        try:
            resp = self._session().get(self.base_url + route, timeout=self.timeout)
        except requests.RequestException as exc:
            raise OracleTransportError(f"GET {route} failed: {exc}") from exc
        if resp.status_code != 200:
            raise ProtocolError(f"GET {route} returned {resp.status_code}")
        return resp.json()

    def health(self) -> bool:
        return self._get("/v1/health").get("status") == "ok"

    def _detect_image(self, image: ImageTensor) -> tuple[Detection, ...]:
        body: dict = {"image_png_b64": base64.b64encode(encode_png(image)).decode("ascii")}
        if self.min_score is not None:
            body["min_score"] = self.min_score
        try:
            resp = self._session().post(
                self.base_url + "/v1/detect", json=body, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise OracleTransportError(f"POST /v1/detect failed: {exc}") from exc
        if resp.status_code != 200:
            raise ProtocolError(f"/v1/detect returned {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            return tuple(
                Detection(
                    box=RegionRect(*(int(round(v)) for v in d["box"])),
                    label=str(d["label"]),
                    score=float(d["score"]),
                )
                for d in payload["detections"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed detect response: {exc}") from exc
