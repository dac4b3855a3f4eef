"""Local wire server exposing the mock detector over the detect protocol.

Routes: POST /v1/detect (JSON body with a base64 PNG), GET /v1/health,
GET /v1/info.  Errors: 400 undecodable image, 413 payload over the limit,
429 when the optional rate limit trips, 500 on anything else.  Box
coordinates are reported in the submitted image's own pixel frame.
"""

from __future__ import annotations

import base64
import binascii
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .imagecore import DecodeError, decode_image
from .mock import MockDetector

DEFAULT_MAX_PAYLOAD = 20 * 1024 * 1024  # wire limit, bytes


class _RateLimiter:
    """Simple token bucket; None capacity disables limiting."""

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


def make_server(
    detector: MockDetector,
    port: int = 0,
    host: str = "127.0.0.1",
    max_payload: int = DEFAULT_MAX_PAYLOAD,
    rate_limit_per_s: float | None = None,
    input_size: tuple[int, int] = (640, 640),
) -> ThreadingHTTPServer:
    """Build (but do not start) the HTTP server; port 0 picks a free port."""
    limiter = _RateLimiter(rate_limit_per_s)

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # keep test output quiet
            pass

        def _reply(self, code: int, doc: dict) -> None:
            body = json.dumps(doc).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            if code == 413:
                # the request body was never read; the connection cannot be reused
                self.send_header("Connection", "close")
                self.close_connection = True
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self) -> None:
            if self.path == "/v1/health":
                self._reply(200, {"status": "ok"})
            elif self.path == "/v1/info":
                self._reply(
                    200,
                    {"model_id": detector.oracle_id, "input_size": list(input_size)},
                )
            else:
                self._reply(404, {"error": "unknown route"})

        def do_POST(self) -> None:
            if self.path != "/v1/detect":
                self._reply(404, {"error": "unknown route"})
                return
            if not limiter.allow():
                self._reply(429, {"error": "rate limited"})
                return
            length = int(self.headers.get("Content-Length", 0))
            if length > max_payload:
                self._reply(413, {"error": f"payload over {max_payload} bytes"})
                return
            try:
                raw = self.rfile.read(length)
                doc = json.loads(raw)
                image = decode_image(base64.b64decode(doc["image_png_b64"], validate=True))
                min_score = float(doc.get("min_score", 0.0))
            except (KeyError, ValueError, TypeError, binascii.Error, DecodeError):
                self._reply(400, {"error": "undecodable request"})
                return
            try:
                started = time.perf_counter()
                detections = detector._detect_image(image)
                elapsed_ms = (time.perf_counter() - started) * 1000.0
                self._reply(
                    200,
                    {
                        "model_id": detector.oracle_id,
                        "detections": [
                            {
                                "box": [d.box.x0, d.box.y0, d.box.x1, d.box.y1],
                                "label": d.label,
                                "score": d.score,
                            }
                            for d in detections
                            if d.score >= min_score
                        ],
                        "elapsed_ms": elapsed_ms,
                    },
                )
            except Exception:
                self._reply(500, {"error": "internal failure"})

    class QuietServer(ThreadingHTTPServer):
        def handle_error(self, request, client_address):
            pass  # client disconnects are routine, not worth a traceback

    return QuietServer((host, port), Handler)


def serve_mock(
    detector: MockDetector,
    port: int,
    host: str = "127.0.0.1",
    max_payload: int = DEFAULT_MAX_PAYLOAD,
    rate_limit_per_s: float | None = None,
) -> None:
    """Run the server until interrupted."""
    server = make_server(
        detector, port=port, host=host, max_payload=max_payload, rate_limit_per_s=rate_limit_per_s
    )
    try:
        server.serve_forever()
    finally:
        server.server_close()
