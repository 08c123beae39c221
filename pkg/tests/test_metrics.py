import numpy as np
import pytest

from colddiff.degrade import BlurDegradation
from colddiff.metrics import (
    MetricReport,
    compare_sets,
    default_feature_extractor,
    frechet_from_features,
    frechet_proxy,
    load_features,
    rmse,
    save_features,
    ssim,
)


class TestRmse:
    def test_identical_is_zero(self, random_image):
        x = random_image()
        assert rmse(x, x) == 0.0

    def test_constant_offset(self, random_image):
        x = random_image()
        assert rmse(x + 0.1, x) == pytest.approx(0.1)

    def test_hand_value(self):
        a = np.array([0.0, 0.0]).reshape(1, 2, 1)
        b = np.array([0.3, 0.4]).reshape(1, 2, 1)
        assert rmse(a, b) == pytest.approx(np.sqrt((0.09 + 0.16) / 2))
        assert rmse(a, b) == pytest.approx(0.25 * np.sqrt(2))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rmse(np.zeros((2, 2, 1)), np.zeros((3, 2, 1)))

    def test_metric_axioms_on_random_triples(self, rng):
        gen = rng.generator()
        for _ in range(20):
            a, b, c = (gen.random((6, 6, 1)) for _ in range(3))
            assert rmse(a, b) == pytest.approx(rmse(b, a))
            assert rmse(a, b) >= 0.0
            assert rmse(a, a) == 0.0
            assert rmse(a, c) <= rmse(a, b) + rmse(b, c) + 1e-12


class TestSsim:
    def test_identical_is_one(self, random_image):
        x = random_image(32, 32)
        assert ssim(x, x) == pytest.approx(1.0)

    def test_constant_zero_vs_one_is_stabilizer_dominated(self):
        a = np.zeros((32, 32, 1))
        b = np.ones((32, 32, 1))
        # with all local moments degenerate the score reduces to
        # C1 * C2 / ((mu_b^2 + C1) * C2) = C1 / (1 + C1)
        expected = 0.01**2 / (1 + 0.01**2)
        assert ssim(a, b) == pytest.approx(expected, rel=1e-6)

    def test_symmetry(self, rng):
        gen = rng.generator()
        a, b = gen.random((24, 24, 1)), gen.random((24, 24, 1))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_in_declared_range(self, rng):
        gen = rng.generator()
        for _ in range(5):
            a, b = gen.random((16, 16, 3)), gen.random((16, 16, 3))
            value = ssim(a, b)
            assert -1.0 <= value <= 1.0

    def test_degradation_lowers_similarity(self, rng):
        x = rng.generator().random((28, 28, 1))
        blur = BlurDegradation(11, (2.0,) * 5)
        assert ssim(blur(x, 5), x) < ssim(blur(x, 1), x) < 1.0


class TestFrechetProxy:
    def test_same_set_is_zero(self, rng):
        images = [rng.child(i).generator().random((16, 16, 1)) for i in range(8)]
        assert frechet_proxy(images, images) == pytest.approx(0.0, abs=1e-8)

    def test_argument_order_invariance(self, rng):
        a = [rng.child(i).generator().random((16, 16, 1)) for i in range(8)]
        b = [rng.child(100 + i).generator().random((16, 16, 1)) for i in range(8)]
        assert frechet_proxy(a, b) == pytest.approx(frechet_proxy(b, a), abs=1e-8)

    def test_mean_shift_on_synthetic_features(self, rng):
        # Gaussian features differing only in mean: distance is |delta|^2
        gen = rng.generator()
        base = gen.standard_normal((4000, 6))
        delta = np.array([1.0, -0.5, 0.25, 0.0, 2.0, 0.0])
        dist = frechet_from_features(base, base + delta)
        assert dist == pytest.approx(float(delta @ delta), rel=0.05)

    def test_degraded_set_is_farther_than_clean(self, rng):
        from colddiff.data import synthetic_digits

        test = list(synthetic_digits(48, rng.child(0)).images)
        clean = list(synthetic_digits(48, rng.child(1)).images)
        blur = BlurDegradation(11, (7.0,) * 20)
        blurred = [blur(x, 20) for x in clean]
        assert frechet_proxy(clean, test) < frechet_proxy(blurred, test)

    def test_needs_two_samples(self, rng):
        one = [rng.generator().random((16, 16, 1))]
        with pytest.raises(ValueError):
            frechet_proxy(one, one)

    def test_extractor_is_fixed_seed(self, rng):
        images = [rng.child(i).generator().random((16, 16, 1)) for i in range(4)]
        np.testing.assert_array_equal(
            default_feature_extractor(images), default_feature_extractor(images)
        )


class TestFeatureFiles:
    def test_round_trip(self, rng, tmp_path):
        feats = rng.generator().standard_normal((10, 7)).astype(np.float32)
        path = tmp_path / "features.cdft"
        save_features(path, feats, protocol="test-protocol")
        loaded, tag = load_features(path)
        assert tag == "test-protocol"
        np.testing.assert_array_equal(loaded, feats.astype(np.float64))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.cdft"
        path.write_bytes(b"ZZZZ" + b"\x00" * 32)
        with pytest.raises(ValueError, match="magic"):
            load_features(path)


class TestReports:
    def test_compare_sets_summary(self, rng):
        gen = rng.generator()
        ref = [gen.random((16, 16, 1)) for _ in range(4)]
        rec = [np.clip(r + 0.05, 0, 1) for r in ref]
        report = compare_sets(rec, ref, distribution_reference=ref)
        assert report.count == 4
        assert report.mean_rmse > 0
        assert report.proxy is not None
        text = report.render_text()
        assert "rmse" in text and "ssim" in text and "proxy" in text
        lines = report.to_jsonl().splitlines()
        assert len(lines) == 5

    def test_mismatched_lengths_rejected(self, rng):
        imgs = [rng.generator().random((8, 8, 1)) for _ in range(3)]
        with pytest.raises(ValueError):
            compare_sets(imgs, imgs[:2])

    def test_empty_report_is_nan(self):
        report = MetricReport([], [])
        assert np.isnan(report.mean_rmse)
