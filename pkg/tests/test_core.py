import numpy as np
import pytest

from colddiff.core import (
    RngStream,
    as_image,
    channel_means,
    clamp_unit,
    from_uint8,
    to_uint8,
    validate_image,
    validate_step,
)


class TestClampUnit:
    def test_upper_clip(self):
        assert clamp_unit(np.array([[[1.3]]]))[0, 0, 0] == 1.0

    def test_lower_clip(self):
        assert clamp_unit(np.array([[[-0.2]]]))[0, 0, 0] == 0.0

    def test_identity_inside_range(self):
        assert clamp_unit(np.array([[[0.7]]]))[0, 0, 0] == 0.7

    def test_idempotent(self, random_image):
        x = random_image(8, 8, 3) * 3.0 - 1.0
        once = clamp_unit(x)
        assert np.array_equal(clamp_unit(once), once)
        assert once.min() >= 0.0 and once.max() <= 1.0


class TestChannelMeans:
    def test_zero_image(self):
        assert np.array_equal(channel_means(np.zeros((4, 4, 3))), np.zeros(3))

    def test_constant_image(self):
        out = channel_means(np.full((4, 4, 3), 0.5))
        np.testing.assert_allclose(out, [0.5, 0.5, 0.5])

    def test_hand_arithmetic(self):
        x = np.array([0.2, 0.6]).reshape(2, 1, 1)
        np.testing.assert_allclose(channel_means(x), [0.4])

    def test_linearity(self, random_image):
        x = random_image(8, 8, 3, 1)
        y = random_image(8, 8, 3, 2)
        a, b = 2.5, -0.7
        np.testing.assert_allclose(
            channel_means(a * x + b * y),
            a * channel_means(x) + b * channel_means(y),
            atol=1e-12,
        )


class TestRngStream:
    def test_bit_identical_across_instances(self):
        a = RngStream(42, 7).generator().standard_normal(100)
        b = RngStream(42, 7).generator().standard_normal(100)
        assert np.array_equal(a, b)

    def test_different_streams_differ(self):
        a = RngStream(42, 0).generator().standard_normal(10)
        b = RngStream(42, 1).generator().standard_normal(10)
        assert not np.array_equal(a, b)

    def test_children_deterministic_and_distinct(self):
        base = RngStream(5)
        kids = [base.child(i) for i in range(50)]
        again = [RngStream(5).child(i) for i in range(50)]
        assert kids == again
        assert len({k.stream for k in kids}) == 50

    def test_nested_children_reproducible(self):
        a = RngStream(9).child(3).child(1).generator().random(4)
        b = RngStream(9).child(3).child(1).generator().random(4)
        assert np.array_equal(a, b)


class TestImageValidation:
    def test_as_image_promotes_2d(self):
        x = as_image(np.zeros((4, 5)))
        assert x.shape == (4, 5, 1)

    def test_as_image_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            as_image(np.zeros(4))

    def test_validate_image_rejects_bad_channels(self):
        with pytest.raises(ValueError, match="channel count"):
            validate_image(np.zeros((4, 4, 2)))

    def test_validate_step_bounds(self):
        assert validate_step(0, 10) == 0
        assert validate_step(10, 10) == 10
        with pytest.raises(ValueError):
            validate_step(11, 10)
        with pytest.raises(ValueError):
            validate_step(-1, 10)


class TestByteConversion:
    def test_round_trip_quantization(self, random_image):
        x = random_image(8, 8, 3)
        back = from_uint8(to_uint8(x))
        assert np.abs(back - x).max() <= 0.5 / 255 + 1e-12

    def test_conversion_rule(self):
        assert to_uint8(np.full((1, 1, 1), 1.0))[0, 0, 0] == 255
        assert from_uint8(np.array([[[128]]], dtype=np.uint8))[0, 0, 0] == 128 / 255
