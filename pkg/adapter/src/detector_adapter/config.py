from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class AdapterConfig:
    """Service configuration.

    `model` selects the backend: "static" (fixed test detections) or
    "torchvision:<architecture>" for a pretrained torchvision detector.
    """

    model: str = "static"
    device: str = "cpu"
    input_size: tuple[int, int] = (640, 640)
    score_floor: float = 0.25
    max_payload: int = 20 * 1024 * 1024
    rate_limit_per_s: float | None = None

    def __post_init__(self) -> None:
        if self.input_size[0] < 1 or self.input_size[1] < 1:
            raise ValueError("input_size must be positive")
        if not 0.0 <= self.score_floor <= 1.0:
            raise ValueError("score_floor must lie in [0, 1]")
        if self.max_payload < 1:
            raise ValueError("max_payload must be positive")
