"""Command line interface.

Subcommands: harvest, attack, eval, drift, cost, serve-mock.
Exit codes: 0 ok, 1 usage error, 2 oracle unreachable, 3 budget exhausted
with no usable result.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .attack import AttackConfig, run_attack, write_trace_jsonl
from .harness import PricingModel, estimate_cost, load_report, run_eval, write_report
from .imagecore import load_image, parse_transform, save_image
from .mock import MockDetector, mock_config_from_dict
from .oracle import HttpOracle, OracleTransportError, QueryBudget
from .patchdb import harvest, load_index, probe_drift, save_index
from .server import serve_mock

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ORACLE = 2
EXIT_BUDGET = 3

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_USAGE)


def _build_oracle(spec: str, mock_config: str | None):
    if spec == "mock":
        if mock_config:
            doc = json.loads(Path(mock_config).read_text())
            return MockDetector(mock_config_from_dict(doc, Path(mock_config).parent))
        return MockDetector()
    try:
        oracle = HttpOracle(spec)
        if not oracle.health():
            raise OracleTransportError("health check failed")
        return oracle
    except OracleTransportError as exc:
        print(f"oracle unreachable: {exc}", file=sys.stderr)
        sys.exit(EXIT_ORACLE)


def _attack_config(args, epsilon: int) -> AttackConfig:
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text())
        doc["epsilon"] = epsilon
        doc["max_queries"] = args.budget
        doc["seed"] = args.seed
        return AttackConfig.from_json_dict(doc)
    return AttackConfig(epsilon=epsilon, max_queries=args.budget, seed=args.seed)


def _image_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def cmd_harvest(args) -> int:
    oracle = _build_oracle(args.oracle, args.mock_config)
    corpus = _image_files(Path(args.corpus))
    if not corpus:
        print(f"no images in {args.corpus}", file=sys.stderr)
        return EXIT_USAGE
    augspec = [parse_transform(tag) for tag in args.augment.split(",") if tag]
    budget = QueryBudget(args.budget)
    rng = np.random.default_rng(args.seed)
    index = harvest(corpus, oracle, augspec, budget, rng)
    save_index(index, args.out)
    status = "complete" if index.complete else "PARTIAL (budget exhausted)"
    print(
        f"harvested {len(index.records)} patches from {len(corpus)} images "
        f"({budget.used} queries, {status}) -> {args.out}"
    )
    if not index.complete and not index.records:
        return EXIT_BUDGET
    return EXIT_OK


def cmd_attack(args) -> int:
    oracle = _build_oracle(args.oracle, args.mock_config)
    db = load_index(args.db)
    image = load_image(args.image)
    cfg = _attack_config(args, args.epsilon)
    result = run_attack(image, db, cfg, oracle)
    save_image(result.adv_image, args.out)
    if args.trace:
        write_trace_jsonl(result, args.trace)
    print(
        f"baseline={result.baseline_count} best={result.best_count} "
        f"increment={result.increment} linf={result.linf} "
        f"queries={result.queries_used} success={result.success}"
    )
    if result.flag == "budget" and not result.success:
        return EXIT_BUDGET
    return EXIT_OK


def cmd_eval(args) -> int:
    oracle = _build_oracle(args.oracle, args.mock_config)
    db = load_index(args.db)
    images = _image_files(Path(args.images))
    if not images:
        print(f"no images in {args.images}", file=sys.stderr)
        return EXIT_USAGE
    epsilons = [int(e) for e in args.epsilons.split(",") if e]
    cfgs = [_attack_config(args, eps) for eps in epsilons]
    report = run_eval(images, db, cfgs, oracle, workers=args.workers)
    artifacts = write_report(report, args.report)
    if args.adv_dir:
        adv_dir = Path(args.adv_dir)
        adv_dir.mkdir(parents=True, exist_ok=True)
        for outcome in report.outcomes:
            if outcome.adv_image is not None:
                save_image(
                    outcome.adv_image, adv_dir / f"{outcome.image_id}_eps{outcome.epsilon}.png"
                )
    asr = " ".join(f"eps{e}={report.asr[e]:.2f}" for e in report.epsilons)
    print(f"ASR: {asr}")
    print("artifacts: " + " ".join(str(p) for p in artifacts.values()))
    return EXIT_OK


def cmd_drift(args) -> int:
    oracle = _build_oracle(args.oracle, args.mock_config)
    index = load_index(args.db)
    report = probe_drift(index, oracle, QueryBudget(args.budget), threshold=args.threshold)
    for image_id, agreement in report.per_probe:
        print(f"{image_id}: agreement={agreement:.3f}")
    print(f"mean agreement={report.agreement:.3f} changed={report.changed}")
    return EXIT_OK


def cmd_cost(args) -> int:
    report = load_report(args.report)
    pricing = PricingModel(
        per_1000_queries=args.per_1k,
        per_gpu_hour=args.gpu_hour,
        seconds_per_query=args.seconds_per_query,
    )
    breakdown = estimate_cost(report, pricing)
    print(json.dumps(breakdown.to_json_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_serve_mock(args) -> int:
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        detector = MockDetector(mock_config_from_dict(doc, Path(args.config).parent))
    else:
        detector = MockDetector()
    print(f"serving {detector.oracle_id} on port {args.port}")
    serve_mock(
        detector,
        port=args.port,
        rate_limit_per_s=args.rate_limit,
        max_payload=args.max_payload,
    )
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="ghostflood", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_oracle(p):
        p.add_argument("--oracle", required=True, help="detector URL or 'mock'")
        p.add_argument("--mock-config", default=None, help="JSON config for the in-process mock")

    p = sub.add_parser("harvest", help="build a patch database from a corpus")
    p.add_argument("--corpus", required=True)
    add_oracle(p)
    p.add_argument("--augment", default="", help="comma list: jitter,posterize,equalize")
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_harvest)

    p = sub.add_parser("attack", help="attack a single image")
    p.add_argument("--image", required=True)
    p.add_argument("--db", required=True)
    add_oracle(p)
    p.add_argument("--epsilon", type=int, required=True)
    p.add_argument("--budget", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="adv.png")
    p.add_argument("--trace", default=None)
    p.add_argument("--config", default=None, help="JSON attack config")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="batch evaluation over an image directory")
    p.add_argument("--images", required=True)
    p.add_argument("--db", required=True)
    add_oracle(p)
    p.add_argument("--epsilons", default="8,16,24,32")
    p.add_argument("--budget", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default="report.json")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--adv-dir", default=None, help="write adversarial images here")
    p.add_argument("--config", default=None, help="JSON attack config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("drift", help="check whether the oracle changed since harvest")
    p.add_argument("--db", required=True)
    add_oracle(p)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--threshold", type=float, default=0.8)
    p.set_defaults(func=cmd_drift)

    p = sub.add_parser("cost", help="estimate attack cost from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--per-1k", type=float, default=1.5)
    p.add_argument("--gpu-hour", type=float, default=2.48)
    p.add_argument("--seconds-per-query", type=float, default=1.0)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("serve-mock", help="serve the mock detector over HTTP")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--config", default=None, help="mock detector JSON config")
    p.add_argument("--rate-limit", type=float, default=None, help="requests per second")
    p.add_argument("--max-payload", type=int, default=20 * 1024 * 1024, help="bytes")
    p.set_defaults(func=cmd_serve_mock)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
