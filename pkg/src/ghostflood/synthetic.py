"""Deterministic synthetic imagery: harvest corpora and attack targets.

Targets carry a per-image Gaussian texture level.  Ghost patterns survive an
L-inf clamp roughly while the clamp radius stays comparable to the local
texture, so a suite spanning texture bands produces an attack success rate
that falls as the ball shrinks.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imagecore import ImageTensor, RegionRect, save_image
from .mock import Template


def make_collage(
    templates: tuple[Template, ...],
    count: int,
    size: int = 640,
    seed: int = 0,
) -> tuple[ImageTensor, tuple[tuple[RegionRect, str], ...]]:
    """Plant `count` exact template copies at non-overlapping random positions.

    Returns the collage and the planted (region, label) ground truth.
    """
    rng = np.random.default_rng(seed)
    base = _gradient(size, size, rng)
    planted: list[tuple[RegionRect, str]] = []
    taken: list[RegionRect] = []
    tries = 0
    while len(planted) < count and tries < 200 * count:
        tries += 1
        tpl = templates[int(rng.integers(0, len(templates)))]
        th, tw = tpl.pattern.height, tpl.pattern.width
        if th + 2 > size or tw + 2 > size:
            continue
        y = int(rng.integers(0, size - th + 1))
        x = int(rng.integers(0, size - tw + 1))
        rect = RegionRect(x, y, x + tw, y + th)
        if any(_touches(rect, other, margin=8) for other in taken):
            continue
        base[y : y + th, x : x + tw] = tpl.pattern.data
        taken.append(rect)
        planted.append((rect, tpl.label))
    if len(planted) < count:
        raise ValueError(f"could only place {len(planted)} of {count} patterns")
    return ImageTensor(base), tuple(planted)


def _touches(a: RegionRect, b: RegionRect, margin: int) -> bool:
    return not (
        a.x1 + margin <= b.x0
        or b.x1 + margin <= a.x0
        or a.y1 + margin <= b.y0
        or b.y1 + margin <= a.y0
    )


def _gradient(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth four-corner color gradient, intensities kept away from the rails."""
    corners = rng.integers(60, 200, (4, 3)).astype(np.float64)
    ys = np.linspace(0.0, 1.0, height)[:, None, None]
    xs = np.linspace(0.0, 1.0, width)[None, :, None]
    top = corners[0] * (1 - xs) + corners[1] * xs
    bottom = corners[2] * (1 - xs) + corners[3] * xs
    return np.clip(top * (1 - ys) + bottom * ys, 0, 255).astype(np.uint8)


def write_corpus(
    directory: str | Path,
    templates: tuple[Template, ...],
    n_images: int,
    objects_per_image: tuple[int, int] = (3, 8),
    size: int = 640,
    seed: int = 0,
) -> list[Path]:
    """Write a corpus of collage PNGs; returns the file paths in order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n_images):
        count = int(rng.integers(objects_per_image[0], objects_per_image[1] + 1))
        collage, _ = make_collage(templates, count, size=size, seed=int(rng.integers(2**31)))
        path = directory / f"collage{i:04d}.png"
        save_image(collage, path)
        paths.append(path)
    return paths


def make_target(
    size: int = 640,
    noise_sigma: float = 0.0,
    seed: int = 0,
    planted: tuple[Template, ...] = (),
) -> ImageTensor:
    """Gradient background plus i.i.d. Gaussian texture of the given strength.

    Optionally plants full-contrast pattern copies (for nonzero baselines).
    """
    rng = np.random.default_rng(seed)
    base = _gradient(size, size, rng).astype(np.float64)
    if noise_sigma > 0:
        base += rng.normal(0.0, noise_sigma, base.shape)
    arr = np.clip(np.rint(base), 0, 255).astype(np.uint8)
    for tpl in planted:
        th, tw = tpl.pattern.height, tpl.pattern.width
        y = int(rng.integers(0, size - th + 1))
        x = int(rng.integers(0, size - tw + 1))
        arr[y : y + th, x : x + tw] = tpl.pattern.data
    return ImageTensor(arr)


# Texture bands: flat-ish targets fall to any clamp radius, heavily textured
# ones resist all of them, the bands in between flip one radius at a time.
TARGET_TEXTURE_BANDS: tuple[tuple[str, tuple[float, ...]], ...] = (
    ("flat", (0.0, 2.0, 5.0, 7.0)),
    ("mild", (13.0, 14.0, 16.0, 17.0)),
    ("grainy", (24.0, 25.0, 26.0, 27.0)),
    ("rough", (33.0, 34.0, 35.0, 36.0, 37.0)),
    ("harsh", (52.0, 58.0, 65.0)),
)


def target_suite(
    size: int = 640,
    seed: int = 2024,
    baseline_templates: tuple[Template, ...] = (),
) -> list[tuple[str, ImageTensor]]:
    """The fixed 20-image synthetic target suite spanning the texture bands."""
    suite: list[tuple[str, ImageTensor]] = []
    index = 0
    for band, sigmas in TARGET_TEXTURE_BANDS:
        for sigma in sigmas:
            planted = baseline_templates if index % 7 == 0 else ()
            img = make_target(size=size, noise_sigma=sigma, seed=seed + index, planted=planted)
            suite.append((f"t{index:02d}_{band}", img))
            index += 1
    return suite
