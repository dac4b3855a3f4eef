import numpy as np

from ghostflood.synthetic import TARGET_TEXTURE_BANDS, make_collage, make_target, target_suite


class TestCollage:
    def test_planted_regions_hold_exact_copies(self, library):
        collage, planted = make_collage(library, 5, size=448, seed=3)
        by_label = {t.label: t for t in library}
        for rect, label in planted:
            window = collage.data[rect.y0 : rect.y1, rect.x0 : rect.x1]
            assert np.array_equal(window, by_label[label].pattern.data)

    def test_no_overlaps(self, library):
        _, planted = make_collage(library, 6, size=640, seed=5)
        rects = [r for r, _ in planted]
        for i, a in enumerate(rects):
            for b in rects[i + 1 :]:
                disjoint = a.x1 <= b.x0 or b.x1 <= a.x0 or a.y1 <= b.y0 or b.y1 <= a.y0
                assert disjoint

    def test_deterministic(self, library):
        a, pa = make_collage(library, 4, size=320, seed=9)
        b, pb = make_collage(library, 4, size=320, seed=9)
        assert a == b
        assert pa == pb


class TestTargets:
    def test_deterministic(self):
        assert make_target(size=128, noise_sigma=10, seed=4) == make_target(
            size=128, noise_sigma=10, seed=4
        )

    def test_texture_level_tracks_sigma(self):
        smooth = make_target(size=256, noise_sigma=0, seed=1)
        rough = make_target(size=256, noise_sigma=40, seed=1)
        # high-frequency energy: difference from the 3x3 local mean
        def grain(img):
            arr = img.data[:, :, 1].astype(np.float64)
            local = (arr[:-2, 1:-1] + arr[2:, 1:-1] + arr[1:-1, :-2] + arr[1:-1, 2:]) / 4
            return np.abs(arr[1:-1, 1:-1] - local).mean()

        assert grain(rough) > 10 * max(grain(smooth), 0.1)

    def test_suite_covers_bands(self):
        suite = target_suite(size=128, seed=1)
        assert len(suite) == 20
        names = [name for name, _ in suite]
        assert len(set(names)) == 20
        for band, sigmas in TARGET_TEXTURE_BANDS:
            assert sum(band in n for n in names) == len(sigmas)
