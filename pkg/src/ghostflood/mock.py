"""Deterministic in-process mock detector.

Detection is normalized cross-correlation of a small template library against
the image, computed densely via FFT and max-pooled onto a stride grid, then
cleaned up with NMS, a minimum-size filter and a score floor.  Exact template
copies score 1.0 at their true location, so a patch database harvested from
collages of these templates is guaranteed to contain exploitable content.

The default library holds two-level block patterns.  An L-inf clamp around a
locally smooth background maps a two-level pattern onto another two-level
pattern, which correlation treats as equivalent, so clamped ghosts stay
recognizable on smooth regions and drown on heavily textured ones.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np
from scipy import fft

from .imagecore import ImageTensor, RegionRect, load_image
from .oracle import Detection, DetectionSet, Oracle, nms


@dataclass(frozen=True)
class Template:
    label: str
    pattern: ImageTensor


@dataclass(frozen=True)
class MockDetectorConfig:
    templates: tuple[Template, ...]
    correlation_threshold: float = 0.6
    score_threshold: float = 0.25
    nms_iou: float = 0.5
    min_size_fraction: float = 0.0
    stride: int = 8
    model_id: str = "mock-ncc"

    def __post_init__(self) -> None:
        for name in ("correlation_threshold", "score_threshold", "nms_iou", "min_size_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not self.templates:
            raise ValueError("template library must not be empty")


# windows with per-pixel std below this are treated as flat (guards the
# correlation against numerator roundoff on near-constant regions)
_MIN_WINDOW_NORM = 0.3

_THEMES: tuple[tuple[str, tuple[int, ...], tuple[int, ...]], ...] = (
    ("dusk", (8, 10, 14), (76, 82, 92)),
    ("slate", (66, 68, 74), (182, 184, 192)),
    ("chalk", (148, 150, 154), (246, 246, 250)),
    ("ember", (62, 16, 12), (224, 96, 72)),
    ("moss", (18, 58, 20), (104, 204, 92)),
)


def default_template_library(seed: int = 0, size: int = 64, block: int = 8) -> tuple[Template, ...]:
    """Seeded two-level block patterns, one per color theme.

    Patterns are resampled until both levels appear and every pair of patterns
    has |correlation| < 0.3, so cross-template false positives stay far below
    the detection threshold.
    """
    if size % block != 0:
        raise ValueError("block must divide size")
    rng = np.random.default_rng(seed)
    cells = size // block
    bit_maps: list[np.ndarray] = []
    while len(bit_maps) < len(_THEMES):
        bits = rng.integers(0, 2, (cells, cells)).astype(np.float64)
        if bits.min() == bits.max():
            continue
        centered = bits - bits.mean()
        norm = np.sqrt((centered**2).sum())
        if any(
            abs((centered * (other - other.mean())).sum())
            / (norm * np.sqrt(((other - other.mean()) ** 2).sum()))
            >= 0.3
            for other in bit_maps
        ):
            continue
        bit_maps.append(bits)
    templates = []
    for (label, low, high), bits in zip(_THEMES, bit_maps):
        grid = np.kron(bits, np.ones((block, block)))[:, :, None]
        lo = np.asarray(low, dtype=np.float64)
        hi = np.asarray(high, dtype=np.float64)
        pattern = (lo + grid * (hi - lo)).astype(np.uint8)
        templates.append(Template(label, ImageTensor(pattern)))
    return tuple(templates)


def default_mock_config(**overrides) -> MockDetectorConfig:
    return MockDetectorConfig(templates=default_template_library(), **overrides)


@dataclass
class _PlannedShape:
    """Per-image-shape precomputation: padded FFT size and template spectra."""

    pad: tuple[int, int]
    spectra: np.ndarray  # (n_templates, 3, pad_h, pad_w // 2 + 1) complex64
    norms: np.ndarray  # (n_templates,) float64, ||pattern - mean||


class MockDetector(Oracle):
    """Stateless, reentrant template-correlation detector."""

    def __init__(self, cfg: MockDetectorConfig | None = None) -> None:
        self.cfg = cfg or default_mock_config()
        self.oracle_id = self.cfg.model_id
        self._plans: dict[tuple[int, int], _PlannedShape] = {}
        self._plan_lock = threading.Lock()

    def _plan(self, shape: tuple[int, int]) -> _PlannedShape:
        with self._plan_lock:
            plan = self._plans.get(shape)
            if plan is not None:
                return plan
            h, w = shape
            max_th = max(t.pattern.height for t in self.cfg.templates)
            max_tw = max(t.pattern.width for t in self.cfg.templates)
            pad = (fft.next_fast_len(h + max_th - 1), fft.next_fast_len(w + max_tw - 1))
            spectra = []
            norms = []
            for tpl in self.cfg.templates:
                arr = tpl.pattern.data.astype(np.float64)
                # per-channel centering: flat colored regions must score zero
                centered = arr - arr.mean(axis=(0, 1), keepdims=True)
                norms.append(float(np.sqrt((centered**2).sum())))
                padded = np.zeros((3,) + pad, dtype=np.float32)
                padded[:, : arr.shape[0], : arr.shape[1]] = np.transpose(
                    centered.astype(np.float32), (2, 0, 1)
                )
                spectra.append(np.conj(fft.rfft2(padded, axes=(1, 2))))
            plan = _PlannedShape(pad, np.stack(spectra), np.asarray(norms))
            self._plans[shape] = plan
            return plan

    def correlation_map(self, image: ImageTensor, template_index: int) -> np.ndarray:
        """Dense valid-mode normalized cross-correlation for one template.

        Exposed for verification; the detect pipeline consumes the same maps.
        """
        return self._correlation_maps(image)[template_index]

    def _correlation_maps(self, image: ImageTensor) -> list[np.ndarray]:
        h, w = image.height, image.width
        plan = self._plan((h, w))
        img = image.data
        fwd = fft.rfft2(
            np.ascontiguousarray(np.transpose(img.astype(np.float32), (2, 0, 1))),
            s=plan.pad,
            axes=(1, 2),
        )
        # per-channel spectral products summed over channels, one inverse per template
        products = np.einsum("kcij,cij->kij", plan.spectra, fwd)
        numerators = fft.irfft2(products, s=plan.pad, axes=(1, 2))
        # integral images give exact integer window sums for the denominator
        integral, integral_sq = cv2.integral2(img)
        win_sq = integral_sq[:, :, 0] + integral_sq[:, :, 1] + integral_sq[:, :, 2]
        # reciprocal L2 norm of the per-channel-centered window, shared per size
        inv_cache: dict[tuple[int, int], np.ndarray] = {}

        def inv_window_norm(th: int, tw: int) -> np.ndarray:
            cached = inv_cache.get((th, tw))
            if cached is not None:
                return cached
            vh, vw = h - th + 1, w - tw + 1
            q = win_sq[th:, tw:][:vh, :vw] - win_sq[:-th, tw:][:vh, :vw]
            q -= win_sq[th:, :-tw][:vh, :vw]
            q += win_sq[:-th, :-tw][:vh, :vw]
            n_pix = float(th * tw)
            for ch in range(3):
                plane = integral[:, :, ch].astype(np.float64)
                s = plane[th:, tw:][:vh, :vw] - plane[:-th, tw:][:vh, :vw]
                s -= plane[th:, :-tw][:vh, :vw]
                s += plane[:-th, :-tw][:vh, :vw]
                s *= s
                s /= n_pix
                q -= s
            np.maximum(q, 0.0, out=q)
            np.sqrt(q, out=q)
            inv = np.zeros_like(q, dtype=np.float32)
            np.divide(1.0, q, out=inv, where=q > _MIN_WINDOW_NORM * np.sqrt(3 * n_pix))
            inv_cache[(th, tw)] = inv
            return inv

        maps: list[np.ndarray] = []
        for k, tpl in enumerate(self.cfg.templates):
            th, tw = tpl.pattern.height, tpl.pattern.width
            if th > h or tw > w:
                maps.append(np.zeros((0, 0), dtype=np.float32))
                continue
            vh, vw = h - th + 1, w - tw + 1
            ncc = numerators[k][:vh, :vw] * inv_window_norm(th, tw)
            ncc *= np.float32(1.0 / plan.norms[k])
            maps.append(ncc)
        return maps

    def _detect_image(self, image: ImageTensor) -> tuple[Detection, ...]:
        cfg = self.cfg
        candidates: list[Detection] = []
        for tpl, ncc in zip(cfg.templates, self._correlation_maps(image)):
            if ncc.size == 0:
                continue
            th, tw = tpl.pattern.height, tpl.pattern.width
            for y, x, value in _pool_peaks(ncc, cfg.stride, cfg.correlation_threshold):
                candidates.append(
                    Detection(
                        box=RegionRect(x, y, x + tw, y + th),
                        label=tpl.label,
                        score=float(np.clip(value, 0.0, 1.0)),
                    )
                )
        kept = nms(DetectionSet(tuple(candidates), cfg.model_id), cfg.nms_iou)
        min_area = cfg.min_size_fraction * image.height * image.width
        final = tuple(
            d
            for d in kept.detections
            if d.box.area >= min_area and d.score >= cfg.score_threshold
        )
        return final


def _pool_peaks(ncc: np.ndarray, stride: int, threshold: float) -> list[tuple[int, int, float]]:
    """Max-pool above-threshold correlations onto the stride grid.

    Each stride x stride block contributes at most one candidate: the block's
    correlation peak, at its dense-map position.  Exact matches are therefore
    found wherever they sit, while candidate count stays bounded.  Positions
    below the threshold never become candidates, so only they are pooled.
    """
    ys, xs = np.nonzero(ncc >= threshold)
    if ys.size == 0:
        return []
    values = ncc[ys, xs]
    best: dict[tuple[int, int], int] = {}
    for i in range(ys.size):
        key = (int(ys[i]) // stride, int(xs[i]) // stride)
        j = best.get(key)
        if j is None or values[i] > values[j]:
            best[key] = i
    return sorted(
        (int(ys[i]), int(xs[i]), float(values[i])) for i in best.values()
    )


def mock_detect(image: ImageTensor, cfg: MockDetectorConfig) -> DetectionSet:
    """One budget-free detection pass; identical input yields identical output."""
    return DetectionSet(MockDetector(cfg)._detect_image(image), cfg.model_id, 0)


def mock_config_from_dict(doc: dict, base_dir: Path | None = None) -> MockDetectorConfig:
    """Build a config from a JSON document (see serve-mock --config).

    Templates come either from `template_seed`/`template_size` (generated
    library) or from an explicit `templates` list of {label, png} entries.
    """
    if "templates" in doc:
        base = base_dir or Path(".")
        templates = tuple(
            Template(str(t["label"]), load_image(base / t["png"])) for t in doc["templates"]
        )
    else:
        templates = default_template_library(
            seed=int(doc.get("template_seed", 0)), size=int(doc.get("template_size", 64))
        )
    cfg = MockDetectorConfig(templates=templates)
    fields = (
        "correlation_threshold",
        "score_threshold",
        "nms_iou",
        "min_size_fraction",
        "stride",
        "model_id",
    )
    overrides = {k: doc[k] for k in fields if k in doc}
    return replace(cfg, **overrides) if overrides else cfg
