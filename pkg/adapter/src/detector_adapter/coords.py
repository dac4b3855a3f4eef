"""Coordinate mapping between the model's input frame and the client's frame."""

from __future__ import annotations

from .backends import RawDetection


def adapt_detections(
    raw: list[RawDetection],
    original_size: tuple[int, int],
    resized_size: tuple[int, int],
) -> list[dict]:
    """Rescale raw boxes back to the original pixel frame.

    `original_size` and `resized_size` are (height, width).  Labels are
    stringified, scores pass through, boxes are clipped to the original frame.
    """
    oh, ow = original_size
    rh, rw = resized_size
    sy = oh / rh
    sx = ow / rw
    out = []
    for (x0, y0, x1, y1), label, score in raw:
        out.append(
            {
                "box": [
                    min(max(x0 * sx, 0.0), ow),
                    min(max(y0 * sy, 0.0), oh),
                    min(max(x1 * sx, 0.0), ow),
                    min(max(y1 * sy, 0.0), oh),
                ],
                "label": str(label),
                "score": float(score),
            }
        )
    return out


def to_model_frame(
    box: tuple[float, float, float, float],
    original_size: tuple[int, int],
    resized_size: tuple[int, int],
) -> tuple[float, float, float, float]:
    """Inverse of adapt_detections' scaling, for round-trip checks."""
    oh, ow = original_size
    rh, rw = resized_size
    sy = rh / oh
    sx = rw / ow
    return (box[0] * sx, box[1] * sy, box[2] * sx, box[3] * sy)
