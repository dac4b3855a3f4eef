import threading

import numpy as np
import pytest

from ghostflood.imagecore import ImageTensor, RegionRect
from ghostflood.oracle import (
    BudgetExhausted,
    Detection,
    DetectionSet,
    QueryBudget,
    iou,
    nms,
)


def det(x0, y0, x1, y1, score, label="a"):
    return Detection(RegionRect(x0, y0, x1, y1), label, score)


class TestBudget:
    def test_charge_counts_and_phases(self):
        budget = QueryBudget(10)
        assert budget.charge("harvest") == 1
        assert budget.charge("attack") == 2
        assert budget.charge("attack") == 3
        assert budget.used == 3
        assert budget.remaining == 7
        tally = budget.phase_tally()
        assert tally == {"harvest": 1, "attack": 2}
        assert sum(tally.values()) == budget.used

    def test_exhaustion_at_limit(self):
        budget = QueryBudget(4000)
        budget._used = 4000  # simulate a spent budget
        budget._phases = {"attack": 4000}
        with pytest.raises(BudgetExhausted):
            budget.charge("attack")
        assert budget.used == 4000

    def test_zero_budget(self):
        with pytest.raises(BudgetExhausted):
            QueryBudget(0).charge()

    def test_concurrent_charges_never_overdraw(self):
        budget = QueryBudget(500)
        indices = []
        lock = threading.Lock()

        def worker():
            while True:
                try:
                    idx = budget.charge("x")
                except BudgetExhausted:
                    return
                with lock:
                    indices.append(idx)

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert budget.used == 500
        assert sorted(indices) == list(range(1, 501))

    def test_detect_after_exhaustion_does_not_touch_oracle(self):
        calls = []

        from ghostflood.oracle import Oracle

        class Probe(Oracle):
            oracle_id = "probe"

            def _detect_image(self, image):
                calls.append(1)
                return ()

        probe = Probe()
        budget = QueryBudget(1)
        img = ImageTensor(np.zeros((4, 4, 3), dtype=np.uint8))
        probe.detect(img, budget)
        with pytest.raises(BudgetExhausted):
            probe.detect(img, budget)
        assert len(calls) == 1

    def test_query_index_strictly_increases(self):
        from ghostflood.oracle import Oracle

        class Empty(Oracle):
            oracle_id = "empty"

            def _detect_image(self, image):
                return ()

        oracle = Empty()
        budget = QueryBudget(5)
        img = ImageTensor(np.zeros((2, 2, 3), dtype=np.uint8))
        indices = [oracle.detect(img, budget).query_index for _ in range(5)]
        assert indices == [1, 2, 3, 4, 5]


class TestIoU:
    def test_disjoint(self):
        assert iou(RegionRect(0, 0, 4, 4), RegionRect(8, 8, 12, 12)) == 0.0

    def test_identical(self):
        assert iou(RegionRect(0, 0, 4, 4), RegionRect(0, 0, 4, 4)) == 1.0

    def test_half_overlap(self):
        a = RegionRect(0, 0, 4, 4)
        b = RegionRect(2, 0, 6, 4)
        assert iou(a, b) == pytest.approx(8 / 24)


class TestNMS:
    def test_disjoint_all_retained(self):
        dets = DetectionSet((det(0, 0, 4, 4, 0.9), det(10, 10, 14, 14, 0.5)), "t")
        out = nms(dets, 0.5)
        assert len(out) == 2

    def test_exact_duplicate_suppressed(self):
        dets = DetectionSet((det(0, 0, 4, 4, 0.9), det(0, 0, 4, 4, 0.8)), "t")
        out = nms(dets, 0.99)
        assert len(out) == 1
        assert out.detections[0].score == 0.9

    def test_output_subset_and_pairwise_bound(self):
        rng = np.random.default_rng(0)
        dets = []
        for _ in range(60):
            x0, y0 = rng.integers(0, 40, 2)
            w, h = rng.integers(3, 12, 2)
            dets.append(det(int(x0), int(y0), int(x0 + w), int(y0 + h), float(rng.random())))
        out = nms(DetectionSet(tuple(dets), "t"), 0.4)
        assert set(out.detections) <= set(dets)
        for i, a in enumerate(out.detections):
            for b in out.detections[i + 1 :]:
                assert iou(a.box, b.box) <= 0.4

    def test_matches_quadratic_reference(self):
        # reference: independent greedy implementation with the same tie-break
        def reference(items, threshold):
            order = sorted(items, key=lambda d: (-d.score, d.box.x0, d.box.y0))
            kept = []
            for d in order:
                if all(iou(d.box, k.box) <= threshold for k in kept):
                    kept.append(d)
            return kept

        rng = np.random.default_rng(7)
        for trial in range(10):
            dets = []
            for _ in range(50):
                x0, y0 = rng.integers(0, 30, 2)
                w, h = rng.integers(2, 10, 2)
                score = float(rng.integers(1, 6)) / 5.0  # coarse scores force ties
                dets.append(det(int(x0), int(y0), int(x0 + w), int(y0 + h), score))
            threshold = float(rng.random())
            ours = nms(DetectionSet(tuple(dets), "t"), threshold).detections
            assert list(ours) == reference(dets, threshold)

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            nms(DetectionSet((), "t"), 1.5)


class TestDetectionInvariants:
    def test_score_range_enforced(self):
        with pytest.raises(ValueError):
            det(0, 0, 2, 2, 1.5)
        with pytest.raises(ValueError):
            det(0, 0, 2, 2, -0.1)
