"""
Tests for slice preprocessing.
"""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from codelnet.dataset import SliceRecord
from codelnet.preprocess import (
    CanvasSizeError,
    DegenerateImageError,
    MaskError,
    PreprocessError,
    SliceSample,
    dilate_mask,
    mask_and_embed,
    preprocess_record,
    preprocess_records,
    zscore,
)
from codelnet.tensorfile import write_tensor_file


def box_mask(shape, rows, cols):
    mask = np.zeros(shape, dtype=np.float32)
    mask[rows, cols] = 1
    return mask


def write_record(root: Path, patient: str, slice_index: int, label: int, seed: int) -> SliceRecord:
    rng = np.random.default_rng(seed)
    names = {}
    arrays = {
        "t1c": rng.standard_normal((24, 24)) + 3,
        "t2": rng.standard_normal((24, 24)) * 2,
        "mask": box_mask((24, 24), slice(8, 14), slice(9, 16)),
    }
    for channel, array in arrays.items():
        names[channel] = write_tensor_file(array, root / f"{patient}_{slice_index}_{channel}.tsr")
    return SliceRecord(patient, slice_index, label, names["t1c"], names["t2"], names["mask"])


class TestZscore:
    """Tests for z-score normalization."""

    def test_hand_example(self):
        """Test [2, 4, 6] with population sigma sqrt(8/3)."""
        np.testing.assert_allclose(zscore(np.array([2.0, 4.0, 6.0])), [-1.2247, 0, 1.2247], atol=1e-4)

    def test_idempotent(self):
        """Test standardized data stays put."""
        x = zscore(np.random.default_rng(0).standard_normal((8, 8)))
        np.testing.assert_allclose(zscore(x), x, atol=1e-6)
        assert x.dtype == np.float32

    def test_constant_image(self):
        """Test zero variance is an error."""
        with pytest.raises(DegenerateImageError):
            zscore(np.array([5.0, 5.0, 5.0]))


class TestDilateMask:
    """Tests for mask dilation."""

    def test_single_pixel_grows_to_square(self):
        """Test radius 5 grows one pixel into an 11x11 square."""
        mask = box_mask((15, 15), 7, 7)
        grown = dilate_mask(mask, 5)
        np.testing.assert_array_equal(grown, box_mask((15, 15), slice(2, 13), slice(2, 13)))

    def test_empty_and_full(self):
        """Test the empty mask stays empty and the full one stays full."""
        assert not dilate_mask(np.zeros((6, 6))).any()
        np.testing.assert_array_equal(dilate_mask(np.ones((6, 6))), np.ones((6, 6)))

    def test_radius_zero(self):
        """Test radius 0 leaves the mask unchanged."""
        mask = box_mask((5, 5), slice(1, 3), 2)
        np.testing.assert_array_equal(dilate_mask(mask, 0), mask)

    def test_non_binary(self):
        """Test non-binary masks are rejected."""
        with pytest.raises(MaskError, match="binary"):
            dilate_mask(np.array([[0.0, 0.5]]))


class TestPreprocessProperties:
    """Seeded properties of zscore and dilate_mask."""

    def test_zscore_statistics(self):
        """Test 100 random non-constant images come out with mean 0 and sigma 1."""
        rng = np.random.default_rng(11)
        for _ in range(100):
            shape = tuple(rng.integers(2, 20, size=2))
            image = rng.standard_normal(shape) * 10.0 ** rng.uniform(-3, 3) + rng.uniform(-100, 100)
            out = zscore(image).astype(np.float64)
            assert abs(out.mean()) < 1e-5
            assert abs(out.std() - 1) < 1e-5

    @pytest.mark.parametrize("seed", range(20))
    def test_dilation_extensive_and_monotone(self, seed):
        """Test dilation covers its input and preserves mask inclusion."""
        rng = np.random.default_rng(seed)
        small = (rng.random((12, 12)) < 0.1).astype(np.float32)
        large = np.maximum(small, (rng.random((12, 12)) < 0.1).astype(np.float32))
        radius = int(rng.integers(0, 4))
        grown_small = dilate_mask(small, radius)
        grown_large = dilate_mask(large, radius)
        assert np.all(grown_small >= small)
        assert np.all(grown_large >= grown_small)

    @pytest.mark.parametrize("seed", range(5))
    def test_dilation_idempotent_at_saturation(self, seed):
        """Test a mask dilated until it fills the grid is a fixed point."""
        rng = np.random.default_rng(seed)
        mask = np.zeros((9, 7), dtype=np.float32)
        mask[rng.integers(0, 9), rng.integers(0, 7)] = 1
        saturated = dilate_mask(mask, 9)
        assert saturated.all()
        np.testing.assert_array_equal(dilate_mask(saturated, 3), saturated)


class TestMaskAndEmbed:
    """Tests for canvas embedding."""

    def test_centering_offsets(self):
        """Test a 10x12 box lands on rows 97-106 and cols 96-107."""
        mask = box_mask((40, 40), slice(5, 15), slice(20, 32))
        out = mask_and_embed([np.ones((40, 40))], mask, canvas=205)
        rows = np.flatnonzero(out[0].any(axis=1))
        cols = np.flatnonzero(out[0].any(axis=0))
        assert (rows[0], rows[-1]) == (97, 106)
        assert (cols[0], cols[-1]) == (96, 107)
        assert out.sum() == 120

    def test_values_outside_mask_zeroed(self):
        """Test pixels inside the box but outside the mask are zero."""
        mask = box_mask((6, 6), slice(1, 4), slice(1, 4))
        mask[1, 1] = 0
        image = np.arange(36.0).reshape(6, 6) + 1
        out = mask_and_embed([image, -image], mask, canvas=5)
        assert out.shape == (2, 5, 5)
        np.testing.assert_array_equal(out[0, 1:4, 1:4], np.where(mask[1:4, 1:4] > 0, image[1:4, 1:4], 0))
        np.testing.assert_array_equal(out[1], -out[0])

    def test_exact_fit(self):
        """Test a full 205x205 tumor fills the canvas."""
        out = mask_and_embed([np.ones((205, 205))], np.ones((205, 205)), canvas=205)
        assert out.all()

    def test_too_large(self):
        """Test a 210-row tumor does not fit."""
        mask = box_mask((220, 220), slice(0, 210), slice(0, 100))
        with pytest.raises(CanvasSizeError, match="210x100"):
            mask_and_embed([np.ones((220, 220))], mask, canvas=205)

    def test_empty_mask(self):
        """Test an empty mask has no bounding box."""
        with pytest.raises(MaskError, match="empty"):
            mask_and_embed([np.ones((4, 4))], np.zeros((4, 4)), canvas=8)

    def test_shape_mismatch(self):
        """Test channels must share the mask's shape."""
        with pytest.raises(MaskError):
            mask_and_embed([np.ones((4, 5))], np.ones((4, 4)), canvas=8)


class TestPreprocessRecord:
    """Tests for whole-record preprocessing."""

    def test_both_channels(self):
        """Test a two-channel sample on a 16px canvas."""
        with tempfile.TemporaryDirectory() as tmp:
            record = write_record(Path(tmp), "P1", 0, 1, seed=0)
            sample = preprocess_record(record, ("t1c", "t2"), canvas=16, dilation_radius=1)
        assert sample.image.shape == (2, 16, 16)
        assert sample.image.dtype == np.float32
        assert (sample.label, sample.key) == (1, ("P1", 0))
        # 6x7 box dilated by one pixel -> 8x9 support
        support = np.flatnonzero(sample.image[0].any(axis=1))
        assert len(support) == 8

    def test_single_channel(self):
        """Test channel selection."""
        with tempfile.TemporaryDirectory() as tmp:
            record = write_record(Path(tmp), "P1", 0, 0, seed=0)
            sample = preprocess_record(record, ("t2",), canvas=16, dilation_radius=0)
        assert sample.channels == 1

    def test_canvas_too_small_names_record(self):
        """Test the size error names the record."""
        with tempfile.TemporaryDirectory() as tmp:
            record = write_record(Path(tmp), "P9", 2, 0, seed=0)
            with pytest.raises(CanvasSizeError, match="P9/2"):
                preprocess_record(record, ("t1c",), canvas=6, dilation_radius=0)

    def test_ordered_with_workers(self):
        """Test threaded preprocessing keeps input order and reports progress."""
        calls = []
        with tempfile.TemporaryDirectory() as tmp:
            records = [write_record(Path(tmp), f"P{i}", 0, i % 2, seed=i) for i in range(6)]
            samples = preprocess_records(
                records,
                canvas=16,
                dilation_radius=1,
                workers=3,
                progress_callback=lambda done, total: calls.append((done, total)),
            )
        assert [s.patient_id for s in samples] == [f"P{i}" for i in range(6)]
        assert calls[-1] == (6, 6)


class TestSliceSample:
    """Tests for the sample container."""

    def test_rejects_non_square(self):
        """Test images must be [C, canvas, canvas]."""
        with pytest.raises(PreprocessError):
            SliceSample(np.zeros((2, 4, 5), dtype=np.float32), 0, "P", 0)

    def test_rejects_non_finite(self):
        """Test NaN pixels are rejected."""
        image = np.zeros((1, 4, 4), dtype=np.float32)
        image[0, 0, 0] = np.nan
        with pytest.raises(PreprocessError):
            SliceSample(image, 0, "P", 0)
