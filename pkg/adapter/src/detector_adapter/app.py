"""FastAPI application implementing the local detect wire protocol.

POST /v1/detect accepts {"image_png_b64": ..., "min_score": optional} and
answers {"model_id", "detections", "elapsed_ms"} with boxes in the submitted
image's own pixel frame.  Errors: 400 undecodable, 413 over the payload
limit, 429 rate-limited, 500 internal.
"""

from __future__ import annotations

import base64
import binascii
import io
import json
import threading
import time

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError

from .backends import Backend, build_backend
from .config import AdapterConfig
from .coords import adapt_detections


class _RateLimiter:
    def __init__(self, per_second: float | None) -> None:
        self.per_second = per_second
        self._allowance = per_second or 0.0
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def allow(self) -> bool:
        if self.per_second is None:
            return True
        with self._lock:
            now = time.monotonic()
            self._allowance = min(
                self.per_second, self._allowance + (now - self._last) * self.per_second
            )
            self._last = now
            if self._allowance < 1.0:
                return False
            self._allowance -= 1.0
            return True


def create_app(cfg: AdapterConfig, backend: Backend | None = None) -> FastAPI:
    backend = backend or build_backend(cfg.model, cfg.device)
    limiter = _RateLimiter(cfg.rate_limit_per_s)
    app = FastAPI(title="detector-adapter", docs_url=None, redoc_url=None)

    def error(code: int, message: str) -> JSONResponse:
        return JSONResponse({"error": message}, status_code=code)

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.get("/v1/info")
    def info() -> dict:
        return {"model_id": backend.model_id, "input_size": list(cfg.input_size)}

    @app.post("/v1/detect")
    async def detect(request: Request):
        if not limiter.allow():
            return error(429, "rate limited")
        declared = request.headers.get("content-length")
        if declared is not None and int(declared) > cfg.max_payload:
            return error(413, f"payload over {cfg.max_payload} bytes")
        body = await request.body()
        if len(body) > cfg.max_payload:
            return error(413, f"payload over {cfg.max_payload} bytes")
        try:
            doc = json.loads(body)
            png = base64.b64decode(doc["image_png_b64"], validate=True)
            with Image.open(io.BytesIO(png)) as img:
                rgb = img.convert("RGB")
                original = np.asarray(rgb, dtype=np.uint8)
            min_score = float(doc.get("min_score", 0.0))
        except (KeyError, ValueError, TypeError, binascii.Error, UnidentifiedImageError, OSError):
            return error(400, "undecodable request")
        try:
            started = time.perf_counter()
            resized = np.asarray(
                Image.fromarray(original).resize(
                    (cfg.input_size[1], cfg.input_size[0]), Image.BILINEAR
                ),
                dtype=np.uint8,
            )
            floor = max(cfg.score_floor, min_score)
            raw = backend.predict(resized, floor)
            detections = adapt_detections(raw, original.shape[:2], cfg.input_size)
            elapsed_ms = (time.perf_counter() - started) * 1000.0
            return {
                "model_id": backend.model_id,
                "detections": detections,
                "elapsed_ms": elapsed_ms,
            }
        except Exception:
            return error(500, "internal failure")

    return app


def serve(cfg: AdapterConfig, host: str = "127.0.0.1", port: int = 8500) -> None:
    import uvicorn

    uvicorn.run(create_app(cfg), host=host, port=port, log_level="warning")
