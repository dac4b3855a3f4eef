"""Command line entry: detector-adapter --model torchvision:fcos_resnet50_fpn --port 8500"""

from __future__ import annotations

import argparse
import os

from .app import serve
from .config import AdapterConfig


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="detector-adapter", description=__doc__)
    parser.add_argument("--model", default="static", help="'static' or 'torchvision:<name>'")
    parser.add_argument("--port", type=int, default=8500)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--input-size", type=int, nargs=2, default=(640, 640), metavar=("H", "W"))
    parser.add_argument("--score-floor", type=float, default=0.25)
    parser.add_argument("--max-payload", type=int, default=20 * 1024 * 1024)
    parser.add_argument("--rate-limit", type=float, default=None, help="requests per second")
    args = parser.parse_args(argv)
    cfg = AdapterConfig(
        model=args.model,
        device=os.environ.get("ADAPTER_DEVICE", "cpu"),
        input_size=tuple(args.input_size),
        score_floor=args.score_floor,
        max_payload=args.max_payload,
        rate_limit_per_s=args.rate_limit,
    )
    serve(cfg, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
