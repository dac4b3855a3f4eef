import json

import numpy as np
import pytest

from ghostflood.attack import AttackConfig, AttackResult, is_success, run_attack, write_trace_jsonl
from ghostflood.imagecore import ImageTensor, RegionRect, linf_distance
from ghostflood.mock import MockDetector, MockDetectorConfig
from ghostflood.oracle import Detection, DetectionSet
from ghostflood.projection import ProjectionParams, ToleranceSchedule
from ghostflood.selection import SelectionConfig
from ghostflood.synthetic import make_target


def fast_config(epsilon, seed=7, **kw):
    return AttackConfig(
        epsilon=epsilon,
        max_queries=4000,
        seed=seed,
        selection=SelectionConfig(trials=5),
        projection=ProjectionParams(iterations=8),
        schedule=ToleranceSchedule((1.5, 1.0)),
        **kw,
    )


class _ConstantOracle:
    """Returns the same boxes whatever the input image looks like."""

    oracle_id = "constant"

    def __init__(self, n=3):
        self._dets = tuple(
            Detection(RegionRect(10 + 70 * i, 10, 60 + 70 * i, 60), "fixed", 0.9)
            for i in range(n)
        )

    def detect(self, image, budget, phase="query"):
        index = budget.charge(phase)
        return DetectionSet(self._dets, self.oracle_id, index)


class TestRunAttack:
    def test_unattackable_oracle(self, patch_index):
        x = ImageTensor(np.full((320, 320, 3), 128, dtype=np.uint8))
        cfg = fast_config(32)
        result = run_attack(x, patch_index, cfg, _ConstantOracle())
        assert result.success is False
        assert result.increment <= 0

    def test_blank_target_default_config_succeeds(self, patch_index, detector):
        # the flagship fixed-seed case: defaults, blank 640, radius 32
        x = ImageTensor(np.full((640, 640, 3), 128, dtype=np.uint8))
        cfg = AttackConfig(epsilon=32, max_queries=4000, seed=7)
        result = run_attack(x, patch_index, cfg, detector)
        assert result.success is True
        assert result.increment > 20
        assert result.linf <= 32
        assert linf_distance(result.adv_image, x) <= 32
        assert result.queries_used <= 4000

    def test_min_size_kill_switch(self, patch_index, library):
        blocked = MockDetector(
            MockDetectorConfig(templates=library, min_size_fraction=0.05)
        )
        x = make_target(size=320, noise_sigma=4, seed=1)
        for seed in (0, 7):
            result = run_attack(x, patch_index, fast_config(32, seed=seed), blocked)
            assert result.success is False

    def test_budget_safety_and_trace_alignment(self, patch_index, detector):
        x = make_target(size=320, noise_sigma=6, seed=2)
        cfg = fast_config(32)
        result = run_attack(x, patch_index, cfg, detector)
        assert result.queries_used <= cfg.max_queries
        assert len(result.trace) == result.queries_used
        indices = [rec["query_index"] for rec in result.trace]
        assert indices == sorted(set(indices))

    def test_budget_exhaustion_flagged(self, patch_index, detector):
        x = make_target(size=320, noise_sigma=6, seed=3)
        cfg = AttackConfig(
            epsilon=32,
            max_queries=4,
            seed=0,
            selection=SelectionConfig(trials=2),
            projection=ProjectionParams(iterations=8),
            schedule=ToleranceSchedule((1.5, 1.0)),
        )
        result = run_attack(x, patch_index, cfg, detector)
        assert result.flag == "budget"
        assert result.success is False
        assert result.queries_used == 4

    def test_election_matches_trace_maximum(self, patch_index, detector):
        x = make_target(size=320, noise_sigma=8, seed=4)
        cfg = fast_config(24)
        result = run_attack(x, patch_index, cfg, detector)
        in_ball = [r["object_count"] for r in result.trace if r["linf"] <= cfg.epsilon]
        assert result.best_count == max(in_ball)

    def test_deterministic_end_to_end(self, patch_index, detector):
        x = make_target(size=320, noise_sigma=10, seed=5)
        cfg = fast_config(32, seed=123)
        a = run_attack(x, patch_index, cfg, detector)
        b = run_attack(x, patch_index, cfg, detector)
        assert a.adv_image == b.adv_image
        assert a.trace == b.trace
        assert a.best_count == b.best_count

    def test_result_invariants(self, patch_index, detector):
        x = make_target(size=320, noise_sigma=5, seed=6)
        cfg = fast_config(16)
        result = run_attack(x, patch_index, cfg, detector)
        assert result.increment == result.best_count - result.baseline_count
        assert result.success == (
            result.increment > cfg.success_increment and result.linf <= cfg.epsilon
        )

    def test_empty_db_rejected(self, patch_index, detector):
        from dataclasses import replace

        with pytest.raises(ValueError):
            run_attack(
                make_target(size=320, seed=0),
                replace(patch_index, records=()),
                fast_config(32),
                detector,
            )


class TestIsSuccess:
    def _result(self, increment, linf, epsilon=32):
        img = ImageTensor(np.zeros((4, 4, 3), dtype=np.uint8))
        return AttackResult(
            adv_image=img,
            baseline_count=0,
            best_count=increment,
            increment=increment,
            queries_used=1,
            success=False,
            trace=(),
            wall_time=0.0,
            linf=linf,
            epsilon=epsilon,
        )

    def test_boundary_plus_one(self):
        cfg = AttackConfig(epsilon=32, selection=SelectionConfig(trials=1))
        assert is_success(self._result(21, 30), cfg) is True

    def test_exact_threshold_fails(self):
        cfg = AttackConfig(epsilon=32, selection=SelectionConfig(trials=1))
        assert is_success(self._result(20, 30), cfg) is False

    def test_out_of_ball_fails(self):
        cfg = AttackConfig(epsilon=32, selection=SelectionConfig(trials=1))
        assert is_success(self._result(50, 33), cfg) is False

    def test_recomputes_distance_from_original(self):
        cfg = AttackConfig(epsilon=32, selection=SelectionConfig(trials=1))
        result = self._result(50, 0)
        far = ImageTensor(np.full((4, 4, 3), 200, dtype=np.uint8))
        assert is_success(result, cfg, original=far) is False


class TestTraceExport:
    def test_jsonl_schema(self, patch_index, detector, tmp_path):
        x = make_target(size=320, noise_sigma=5, seed=8)
        result = run_attack(x, patch_index, fast_config(32), detector)
        path = tmp_path / "trace.jsonl"
        write_trace_jsonl(result, path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == result.queries_used
        for line in lines:
            rec = json.loads(line)
            assert set(rec) == {"query_index", "phase", "object_count", "linf", "d"}


class TestConfigSerialization:
    def test_round_trip(self):
        cfg = fast_config(24, seed=42)
        doc = cfg.to_json_dict()
        assert AttackConfig.from_json_dict(doc) == cfg

    def test_validation(self):
        with pytest.raises(ValueError):
            AttackConfig(epsilon=0)
        with pytest.raises(ValueError):
            AttackConfig(epsilon=8, max_queries=5, selection=SelectionConfig(trials=10))
