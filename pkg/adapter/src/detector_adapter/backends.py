"""Detector backends.

A backend receives an RGB uint8 array already resized to the model's input
frame and returns raw detections in that frame, after its own native
post-processing.  Raw logits or pre-suppression candidates are never exposed.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

RawDetection = tuple[tuple[float, float, float, float], str, float]  # box xyxy, label, score


class Backend(Protocol):
    model_id: str

    def predict(self, image: np.ndarray, score_floor: float) -> list[RawDetection]:
        ...


class StaticBackend:
    """Deterministic fixture backend: two boxes at fixed fractional positions."""

    model_id = "static-fixture"

    def predict(self, image: np.ndarray, score_floor: float) -> list[RawDetection]:
        h, w = image.shape[:2]
        dets = [
            ((0.10 * w, 0.20 * h, 0.35 * w, 0.55 * h), "crate", 0.91),
            ((0.50 * w, 0.45 * h, 0.90 * w, 0.80 * h), "drum", 0.64),
        ]
        return [d for d in dets if d[2] >= score_floor]


class TorchvisionBackend:
    """Wraps a pretrained torchvision detection model (weights="DEFAULT").

    Loading happens at construction; inference is locked to one request at a
    time, which satisfies the contract that responses match requests.
    """

    def __init__(self, architecture: str, device: str = "cpu") -> None:
        import threading

        import torch
        import torchvision

        self.model_id = f"torchvision-{architecture}"
        self._device = torch.device(device)
        factory = getattr(torchvision.models.detection, architecture, None)
        if factory is None:
            raise ValueError(f"unknown torchvision detection model {architecture!r}")
        self._model = factory(weights="DEFAULT").eval().to(self._device)
        weights_enum = getattr(
            torchvision.models.detection,
            f"{''.join(part.capitalize() for part in architecture.split('_'))}_Weights",
            None,
        )
        self._categories = (
            weights_enum.DEFAULT.meta.get("categories") if weights_enum is not None else None
        )
        self._lock = threading.Lock()

    def predict(self, image: np.ndarray, score_floor: float) -> list[RawDetection]:
        import torch

        tensor = torch.from_numpy(image).permute(2, 0, 1).float().div(255.0).to(self._device)
        with self._lock, torch.no_grad():
            output = self._model([tensor])[0]
        dets: list[RawDetection] = []
        for box, label, score in zip(
            output["boxes"].cpu().numpy(),
            output["labels"].cpu().numpy(),
            output["scores"].cpu().numpy(),
        ):
            if score < score_floor:
                continue
            name = (
                self._categories[int(label)]
                if self._categories and int(label) < len(self._categories)
                else str(int(label))
            )
            dets.append(((float(box[0]), float(box[1]), float(box[2]), float(box[3])), name, float(score)))
        return dets


def build_backend(model: str, device: str = "cpu") -> Backend:
    if model == "static":
        return StaticBackend()
    if model.startswith("torchvision:"):
        return TorchvisionBackend(model.split(":", 1)[1], device=device)
    raise ValueError(f"unknown backend {model!r}")
