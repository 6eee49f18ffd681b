import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from advmask import ConfigurationError, ImageTensor, SlicParams, segment_pixel_sets, slic_segment
from advmask.segmentation import SegmentationMap, segmentation_to_png, segmentation_to_rle
from synthetic import make_suite_image


def _random_image(seed, channels=3, size=32):
    gen = np.random.default_rng(seed)
    smooth = ndimage.uniform_filter(
        gen.uniform(0, 1, (channels, size, size)), size=(1, 5, 5), mode="reflect"
    )
    return ImageTensor(np.clip(smooth, 0, 1).astype(np.float32))


class TestSlic:
    def test_single_segment(self):
        img = _random_image(0, size=16)
        seg = slic_segment(img, SlicParams(target_segments=1))
        np.testing.assert_array_equal(seg.labels, np.zeros((16, 16), dtype=np.int32))
        assert seg.n_segments == 1

    def test_uniform_image_tiles_regularly(self):
        # color term vanishes, so clustering reduces to the grid oracle:
        # 16 near-square tiles of about H*W/16 pixels each
        img = ImageTensor(np.full((1, 64, 64), 0.5, dtype=np.float32))
        seg = slic_segment(img, SlicParams(target_segments=16))
        assert seg.n_segments == 16
        sizes = np.bincount(seg.labels.ravel())
        target = 64 * 64 / 16
        assert sizes.min() >= target / 2 and sizes.max() <= target * 2

    def test_two_color_halves_split_at_boundary(self):
        # brute-force 2-center oracle: the optimal split is the color edge
        arr = np.zeros((1, 64, 64), dtype=np.float32)
        arr[:, :, 32:] = 1.0
        seg = slic_segment(ImageTensor(arr), SlicParams(target_segments=2))
        assert seg.n_segments == 2
        for row in range(64):
            change = np.flatnonzero(np.diff(seg.labels[row]))
            assert len(change) == 1
            assert abs(int(change[0]) + 1 - 32) <= 1

    def test_label_count_near_target(self):
        for seed in range(4):
            img = _random_image(seed)
            seg = slic_segment(img, SlicParams(target_segments=20))
            assert 14 <= seg.n_segments <= 26  # +/- 30% of target

    def test_deterministic(self):
        img = _random_image(7)
        a = slic_segment(img, SlicParams(target_segments=20))
        b = slic_segment(img, SlicParams(target_segments=20))
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_connectivity_four_connected(self):
        four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
        for seed in (1, 8):
            seg = slic_segment(_random_image(seed), SlicParams(target_segments=15))
            for label in range(seg.n_segments):
                _, n = ndimage.label(seg.labels == label, structure=four)
                assert n == 1, f"segment {label} is disconnected"

    def test_target_above_pixel_count_rejected(self):
        img = _random_image(0, size=4)
        with pytest.raises(ConfigurationError):
            slic_segment(img, SlicParams(target_segments=17))

    def test_grayscale_contrast_patch_is_own_segment(self):
        img = make_suite_image(0)
        seg = slic_segment(img, SlicParams(target_segments=50))
        patch_labels = np.unique(seg.labels[24:32, 32:40])
        assert len(patch_labels) == 1

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=10, deadline=None)
    def test_partition_property(self, seed):
        img = _random_image(seed, channels=1, size=20)
        seg = slic_segment(img, SlicParams(target_segments=6))
        sets = segment_pixel_sets(seg)
        total = np.zeros((20, 20), dtype=int)
        for mask in sets:
            total += mask.astype(int)
        np.testing.assert_array_equal(total, np.ones((20, 20), dtype=int))


class TestSegmentPixelSets:
    def test_two_by_two(self):
        seg = SegmentationMap(np.array([[0, 0], [1, 1]], dtype=np.int32), 2)
        sets = segment_pixel_sets(seg)
        assert sets[0].sum() == 2 and sets[1].sum() == 2

    def test_single_label(self):
        seg = SegmentationMap(np.zeros((3, 5), dtype=np.int32), 1)
        sets = segment_pixel_sets(seg)
        assert len(sets) == 1 and sets[0].all()

    def test_disjoint_union(self):
        labels = np.array([[0, 1, 2], [2, 1, 0]], dtype=np.int32)
        seg = SegmentationMap(labels, 3)
        sets = segment_pixel_sets(seg)
        stacked = np.stack(sets)
        assert (stacked.sum(axis=0) == 1).all()


class TestExports:
    def test_png_export(self, tmp_path):
        seg = slic_segment(_random_image(2), SlicParams(target_segments=8))
        segmentation_to_png(seg, tmp_path / "seg.png")
        assert (tmp_path / "seg.png").stat().st_size > 0

    def test_rle_roundtrip(self):
        seg = slic_segment(_random_image(3), SlicParams(target_segments=8))
        doc = json.loads(segmentation_to_rle(seg))
        flat = np.concatenate([[label] * length for label, length in doc["runs"]])
        np.testing.assert_array_equal(flat, seg.labels.ravel())
        assert doc["n_segments"] == seg.n_segments
        assert (doc["height"], doc["width"]) == (seg.height, seg.width)