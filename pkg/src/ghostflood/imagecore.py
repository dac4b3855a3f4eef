"""Pixel-level primitives shared by every other module.

Images are H x W x 3 arrays of integer intensities in [0, 255]; perturbations
are signed integer deltas in [-255, 255].  All math stays in the integer
domain so identical inputs reproduce identical outputs bit for bit.  Rounding,
where fractional scales appear, is round-half-away-from-zero.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError


class DecodeError(ValueError):
    """Raised when bytes cannot be decoded as a PNG or JPEG image."""


@dataclass(frozen=True, eq=False)
class RegionRect:
    """Half-open pixel rectangle: [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self) -> None:
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate region {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"negative origin {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RegionRect):
            return NotImplemented
        return (self.x0, self.y0, self.x1, self.y1) == (other.x0, other.y0, other.x1, other.y1)

    def __hash__(self) -> int:
        return hash((self.x0, self.y0, self.x1, self.y1))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """Immutable RGB image, uint8, shape (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"expected (H, W, 3) array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255):
                raise ValueError("intensity values outside [0, 255]")
            arr = arr.astype(np.uint8)
        else:
            arr = arr.copy()
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    def to_array(self) -> np.ndarray:
        """Writable copy of the pixel data."""
        return self.data.copy()

    def bounds(self) -> RegionRect:
        return RegionRect(0, 0, self.width, self.height)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageTensor):
            return NotImplemented
        return bool(np.array_equal(self.data, other.data))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class Perturbation:
    """Signed per-pixel-per-channel delta, int16, same shape as its base image."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {arr.shape}")
        if np.any(arr < -255) or np.any(arr > 255):
            raise ValueError("delta values outside [-255, 255]")
        object.__setattr__(self, "data", _frozen(arr.astype(np.int16)))

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Perturbation):
            return NotImplemented
        return bool(np.array_equal(self.data, other.data))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class PixelMask:
    """Boolean per-pixel-per-channel mask matching a Perturbation's shape."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {arr.shape}")
        object.__setattr__(self, "data", _frozen(arr.astype(bool)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PixelMask):
            return NotImplemented
        return bool(np.array_equal(self.data, other.data))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class ColorStats:
    """Per-channel mean and population standard deviation of a region."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __post_init__(self) -> None:
        if any(m < 0 or m > 255 for m in self.mean):
            raise ValueError("mean outside [0, 255]")
        if any(s < 0 for s in self.std):
            raise ValueError("negative standard deviation")


@dataclass(frozen=True)
class TransformSpec:
    """Color transform tag plus parameters.

    Supported kinds: ``identity``, ``jitter`` (brightness/contrast half-ranges),
    ``equalize``, ``posterize`` (bits kept, 1..8).
    """

    kind: str
    brightness: float = 0.2
    contrast: float = 0.2
    bits: int = 4

    def __post_init__(self) -> None:
        if self.kind not in ("identity", "jitter", "equalize", "posterize"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "jitter" and not (0 <= self.brightness <= 1 and 0 <= self.contrast <= 1):
            raise ValueError("jitter half-ranges must lie in [0, 1]")
        if self.kind == "posterize" and not 1 <= self.bits <= 8:
            raise ValueError("posterize bits must lie in [1, 8]")

    @property
    def tag(self) -> str:
        if self.kind == "posterize":
            return f"posterize:{self.bits}"
        return self.kind


def parse_transform(text: str) -> TransformSpec:
    """Parse a transform tag such as ``jitter``, ``posterize:4`` or ``equalize``."""
    kind, _, arg = text.strip().partition(":")
    if kind == "posterize" and arg:
        return TransformSpec("posterize", bits=int(arg))
    if kind == "jitter" and arg:
        b, _, c = arg.partition(",")
        return TransformSpec("jitter", brightness=float(b), contrast=float(c or b))
    return TransformSpec(kind)


def round_half_away(values: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero (np.round rounds to even)."""
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def load_image(path: str | Path) -> ImageTensor:
    """Decode a PNG or JPEG file into an RGB tensor.

    Grayscale inputs are replicated to three channels; alpha is dropped.
    """
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    return ImageTensor(arr)


def decode_image(data: bytes) -> ImageTensor:
    """Decode in-memory PNG/JPEG bytes into an RGB tensor."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"cannot decode image bytes: {exc}") from exc
    return ImageTensor(arr)


def save_image(img: ImageTensor, path: str | Path) -> None:
    """Write a lossless PNG; pixel data round-trips bit-exactly through load_image."""
    Image.fromarray(img.data).save(path, format="PNG")


def encode_png(img: ImageTensor) -> bytes:
    """Lossless PNG encoding of the pixel data."""
    buf = io.BytesIO()
    Image.fromarray(img.data).save(buf, format="PNG")
    return buf.getvalue()


def _require_same_dims(a: ImageTensor, b: ImageTensor) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"dimension mismatch: {a.data.shape} vs {b.data.shape}")


def linf_distance(a: ImageTensor, b: ImageTensor) -> int:
    """Maximum absolute per-channel intensity difference."""
    _require_same_dims(a, b)
    return int(np.max(np.abs(a.data.astype(np.int16) - b.data.astype(np.int16))))


def clamp_ball(adv: ImageTensor, orig: ImageTensor, radius: int) -> ImageTensor:
    """Clamp every channel of `adv` into [orig - radius, orig + radius] and [0, 255]."""
    _require_same_dims(adv, orig)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    return ImageTensor(clamp_ball_array(adv.data, orig.data, radius))


def clamp_ball_array(adv: np.ndarray, orig: np.ndarray, radius: int) -> np.ndarray:
    """Array form of clamp_ball for internal hot paths; returns uint8."""
    base = orig.astype(np.int16)
    out = np.clip(adv.astype(np.int16), base - radius, base + radius)
    return np.clip(out, 0, 255).astype(np.uint8)


def crop(img: ImageTensor, region: RegionRect) -> ImageTensor:
    """Copy of the pixels inside `region`."""
    _check_region(img, region)
    return ImageTensor(img.data[region.y0 : region.y1, region.x0 : region.x1])


def paste_patch(img: ImageTensor, patch: ImageTensor, region: RegionRect) -> ImageTensor:
    """Copy of `img` with `region` overwritten by `patch`; everything else untouched."""
    _check_region(img, region)
    if (patch.height, patch.width) != (region.height, region.width):
        raise ValueError(
            f"patch {patch.height}x{patch.width} does not fit region "
            f"{region.height}x{region.width}"
        )
    out = img.to_array()
    out[region.y0 : region.y1, region.x0 : region.x1] = patch.data
    return ImageTensor(out)


def _check_region(img: ImageTensor, region: RegionRect) -> None:
    if region.x1 > img.width or region.y1 > img.height:
        raise ValueError(f"region {region} exceeds image {img.height}x{img.width}")


def resize(img: ImageTensor, height: int, width: int) -> ImageTensor:
    """Bilinear resize (half-pixel centre alignment, cv2.INTER_LINEAR)."""
    if height < 1 or width < 1:
        raise ValueError("target size must be positive")
    if (height, width) == (img.height, img.width):
        return img
    out = cv2.resize(img.data, (width, height), interpolation=cv2.INTER_LINEAR)
    return ImageTensor(out)


def color_stats(img: ImageTensor, region: RegionRect) -> ColorStats:
    """Per-channel mean and population standard deviation over `region`."""
    _check_region(img, region)
    window = img.data[region.y0 : region.y1, region.x0 : region.x1].astype(np.float64)
    mean = window.mean(axis=(0, 1))
    std = window.std(axis=(0, 1))
    return ColorStats(tuple(float(m) for m in mean), tuple(float(s) for s in std))


def color_transform(img: ImageTensor, spec: TransformSpec, rng: np.random.Generator) -> ImageTensor:
    """Apply a color transform; deterministic given (img, spec, rng state).

    `jitter` draws a brightness factor then a contrast factor from `rng`;
    the other kinds consume no randomness.
    """
    if spec.kind == "identity":
        return img
    if spec.kind == "posterize":
        mask = np.uint8(0xFF & ~((1 << (8 - spec.bits)) - 1))
        return ImageTensor(img.data & mask)
    if spec.kind == "equalize":
        return ImageTensor(_equalize(img.data))
    # jitter: brightness scale then contrast stretch around the global mean
    bf = float(rng.uniform(1.0 - spec.brightness, 1.0 + spec.brightness))
    cf = float(rng.uniform(1.0 - spec.contrast, 1.0 + spec.contrast))
    vals = img.data.astype(np.float64) * bf
    mean = vals.mean()
    vals = (vals - mean) * cf + mean
    return ImageTensor(np.clip(round_half_away(vals), 0, 255).astype(np.uint8))


def _equalize(arr: np.ndarray) -> np.ndarray:
    """Per-channel histogram equalization (classic cumulative-step LUT)."""
    out = np.empty_like(arr)
    for ch in range(3):
        hist = np.bincount(arr[:, :, ch].ravel(), minlength=256)
        nonzero = hist[hist > 0]
        if nonzero.size <= 1:
            out[:, :, ch] = arr[:, :, ch]
            continue
        step = (int(hist.sum()) - int(nonzero[-1])) // 255
        if step == 0:
            out[:, :, ch] = arr[:, :, ch]
            continue
        lut = np.empty(256, dtype=np.uint8)
        n = step // 2
        for i in range(256):
            lut[i] = min(n // step, 255)
            n += int(hist[i])
        out[:, :, ch] = lut[arr[:, :, ch]]
    return out
