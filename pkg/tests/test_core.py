import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advmask import (
    ConfigurationError,
    ConstantDetector,
    CountingDetector,
    ImageTensor,
    Label,
    RngStream,
    clamp_pixels,
    classify,
    gaussian_noise,
    read_png,
    write_png,
)
from synthetic import make_patch_detector, make_suite_image, sigmoid


class TestImageTensor:
    def test_valid_roundtrip(self):
        arr = np.linspace(0, 1, 12, dtype=np.float32).reshape(3, 2, 2)
        img = ImageTensor(arr)
        assert img.channels == 3 and img.height == 2 and img.width == 2
        np.testing.assert_array_equal(img.data, arr)

    def test_rejects_out_of_range(self):
        with pytest.raises(ConfigurationError):
            ImageTensor(np.full((1, 2, 2), 1.5, dtype=np.float32))
        with pytest.raises(ConfigurationError):
            ImageTensor(np.full((1, 2, 2), -0.1, dtype=np.float32))

    def test_rejects_bad_channels(self):
        with pytest.raises(ConfigurationError):
            ImageTensor(np.zeros((2, 4, 4), dtype=np.float32))

    def test_rejects_nan(self):
        arr = np.zeros((1, 2, 2), dtype=np.float32)
        arr[0, 0, 0] = np.nan
        with pytest.raises(ConfigurationError):
            ImageTensor(arr)

    def test_bytes_roundtrip_is_exact(self):
        gen = np.random.default_rng(0)
        img = ImageTensor(gen.uniform(0, 1, size=(3, 5, 7)).astype(np.float32))
        back = ImageTensor.from_bytes(img.to_bytes(), img.shape)
        np.testing.assert_array_equal(back.data, img.data)

    def test_immutable(self):
        img = ImageTensor(np.zeros((1, 2, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1.0


class TestClassify:
    def test_constant_real(self):
        p, label = classify(ConstantDetector(1.0), make_suite_image(0))
        assert p == 1.0 and label is Label.REAL

    def test_constant_fake(self):
        p, label = classify(ConstantDetector(0.0), make_suite_image(0))
        assert p == 0.0 and label is Label.FAKE

    def test_threshold_boundary_is_real(self):
        _, label = classify(ConstantDetector(0.5), make_suite_image(0))
        assert label is Label.REAL

    def test_planted_patch_intact_is_fake(self):
        # patch matches the reference except for the planted offset, which
        # stays below the decision offset: detector must say Fake
        det = make_patch_detector()
        img = make_suite_image(3)
        p, label = classify(det, img)
        expected = sigmoid(det.sensitivity * (det.discrepancy(img) - det.threshold_offset))
        assert label is Label.FAKE
        assert p == pytest.approx(expected, abs=1e-12)
        assert p < 0.5

    def test_counts_one_forward_pass(self):
        det = CountingDetector(ConstantDetector(0.3))
        classify(det, make_suite_image(0))
        snap = det.counter.snapshot()
        assert snap.forward_passes == 1 and snap.batch_calls == 1

    def test_batch_counting_is_exact(self):
        det = CountingDetector(ConstantDetector(0.3))
        batch = [make_suite_image(i) for i in range(7)]
        det.score_batch(batch)
        assert det.counter.snapshot().forward_passes == 7


class TestGaussianNoise:
    def test_same_state_same_draws(self):
        a = gaussian_noise(RngStream(9, 4), (2, 3, 3))
        b = gaussian_noise(RngStream(9, 4), (2, 3, 3))
        np.testing.assert_array_equal(a, b)

    def test_different_streams_differ(self):
        a = gaussian_noise(RngStream(9, 1), (4, 4))
        b = gaussian_noise(RngStream(9, 2), (4, 4))
        assert np.any(a != b)

    def test_law_of_large_numbers(self):
        draws = gaussian_noise(RngStream(123), (1_000_000,))
        assert abs(draws.mean()) < 0.01
        assert abs(draws.var() - 1.0) < 0.02

    def test_split_is_deterministic_and_distinct(self):
        root = RngStream(7)
        a = root.split("module", 1, 2)
        b = RngStream(7).split("module", 1, 2)
        c = root.split("module", 1, 3)
        assert (a.seed, a.stream_id) == (b.seed, b.stream_id)
        assert a.stream_id != c.stream_id
        np.testing.assert_array_equal(
            a.generator.standard_normal(5), b.generator.standard_normal(5)
        )


class TestClampPixels:
    def test_in_range_unchanged(self):
        arr = np.array([0.0, 0.25, 1.0])
        np.testing.assert_array_equal(clamp_pixels(arr), arr)

    def test_saturates(self):
        np.testing.assert_array_equal(
            clamp_pixels(np.array([-1.0, 0.5, 2.0])), np.array([0.0, 0.5, 1.0])
        )
        np.testing.assert_array_equal(
            clamp_pixels(np.array([1.3, -0.2])), np.array([1.0, 0.0])
        )

    @given(
        st.lists(
            st.floats(min_value=-10, max_value=10, allow_nan=False), min_size=1, max_size=50
        )
    )
    @settings(max_examples=30, deadline=None)
    def test_idempotent_and_bounded(self, values):
        arr = np.array(values)
        out = clamp_pixels(arr)
        assert out.min() >= 0.0 and out.max() <= 1.0
        np.testing.assert_array_equal(clamp_pixels(out), out)
        keep = (arr >= 0) & (arr <= 1)
        np.testing.assert_array_equal(out[keep], arr[keep])


class TestPngIO:
    def test_roundtrip_gray(self, tmp_path):
        img = make_suite_image(1)  # 8-bit aligned values survive the round trip
        write_png(img, tmp_path / "x.png")
        back = read_png(tmp_path / "x.png")
        np.testing.assert_array_equal(back.data, img.data)

    def test_roundtrip_rgb(self, tmp_path):
        gen = np.random.default_rng(2)
        arr = np.rint(gen.uniform(0, 1, (3, 10, 8)) * 255) / 255
        img = ImageTensor(arr.astype(np.float32))
        write_png(img, tmp_path / "x.png")
        back = read_png(tmp_path / "x.png")
        np.testing.assert_array_equal(back.data, img.data)
