"""
Slice preprocessing: z-score normalization, mask dilation and canvas embedding.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import SliceRecord
from .tensorfile import read_tensor_file

# Channel selection -> manifest channels, in input-channel order
CHANNELS: dict[str, tuple[str, ...]] = {
    "t1c": ("t1c",),
    "t2": ("t2",),
    "both": ("t1c", "t2"),
}

DEFAULT_DILATION = 5


class PreprocessError(Exception):
    """Slice cannot be turned into a canonical sample."""

    pass


class DegenerateImageError(PreprocessError):
    """Image has zero variance."""

    pass


class MaskError(PreprocessError):
    """Mask is not binary, empty, or misaligned with its image."""

    pass


class CanvasSizeError(PreprocessError):
    """Tumor bounding box does not fit the canvas."""

    pass


@dataclass
class SliceSample:
    """
    Canonical network input: z-scored channels of one slice centered on a
    zero canvas, with its label and provenance.
    """

    image: np.ndarray  # [C, canvas, canvas] float32
    label: int
    patient_id: str
    slice_index: int
    augmentation: str = "original"

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[1] != self.image.shape[2]:
            raise PreprocessError(
                f"Sample {self.patient_id}/{self.slice_index}: image must be [C, canvas, canvas], "
                f"got shape {self.image.shape}"
            )
        if not np.all(np.isfinite(self.image)):
            raise PreprocessError(
                f"Sample {self.patient_id}/{self.slice_index}: image has non-finite values"
            )

    @property
    def key(self) -> tuple[str, int]:
        return (self.patient_id, self.slice_index)

    @property
    def canvas(self) -> int:
        return self.image.shape[1]

    @property
    def channels(self) -> int:
        return self.image.shape[0]


def zscore(image: np.ndarray) -> np.ndarray:
    """
    Standardize an image to zero mean and unit population standard deviation.

    Statistics are taken over the whole image in 64-bit.

    Raises:
        DegenerateImageError: If the image is constant
    """
    x = np.asarray(image, dtype=np.float64)
    mu = x.mean()
    sigma = x.std()
    if not np.isfinite(sigma) or sigma == 0:
        raise DegenerateImageError(f"Cannot z-score a constant image (value {mu:g})")
    return ((x - mu) / sigma).astype(np.float32)


def _check_binary(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if not np.all((mask == 0) | (mask == 1)):
        values = np.unique(mask[(mask != 0) & (mask != 1)])[:3]
        raise MaskError(f"Mask must be binary, found values {values.tolist()}")
    return mask.astype(bool)


def dilate_mask(mask: np.ndarray, radius: int = DEFAULT_DILATION) -> np.ndarray:
    """
    Binary dilation by `radius` iterations of the 3x3 (8-connected) structuring element.

    Raises:
        MaskError: If the mask is not binary or radius is negative
    """
    if radius < 0:
        raise MaskError(f"Dilation radius must be >= 0, got {radius}")
    grown = _check_binary(mask)
    for _ in range(radius):
        padded = np.pad(grown, 1, mode="constant", constant_values=False)
        grown = sliding_window_view(padded, (3, 3)).any(axis=(-2, -1))
    return grown.astype(np.float32)


def mask_bounding_box(mask: np.ndarray) -> tuple[slice, slice]:
    """Row and column slices of the smallest box holding every mask pixel."""
    rows = np.flatnonzero(np.any(mask, axis=1))
    cols = np.flatnonzero(np.any(mask, axis=0))
    if rows.size == 0:
        raise MaskError("Mask is empty")
    return slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1)


def mask_and_embed(
    channels: Sequence[np.ndarray],
    mask: np.ndarray,
    canvas: int = 205,
) -> np.ndarray:
    """
    Zero each channel outside the mask, crop to the mask's bounding box and
    center the crop on a zero canvas. All channels get the same placement.

    Returns:
        [C, canvas, canvas] float32

    Raises:
        CanvasSizeError: If the bounding box exceeds the canvas
        MaskError: If the mask is empty, non-binary or shaped unlike the channels
    """
    binary = _check_binary(mask)
    for i, channel in enumerate(channels):
        if channel.shape != binary.shape:
            raise MaskError(f"Channel {i} shape {channel.shape} differs from mask shape {binary.shape}")
    rows, cols = mask_bounding_box(binary)
    extent_h = rows.stop - rows.start
    extent_w = cols.stop - cols.start
    if extent_h > canvas or extent_w > canvas:
        raise CanvasSizeError(
            f"Tumor bounding box {extent_h}x{extent_w} exceeds canvas {canvas}x{canvas}"
        )
    top = (canvas - extent_h) // 2
    left = (canvas - extent_w) // 2
    crop_mask = binary[rows, cols]

    out = np.zeros((len(channels), canvas, canvas), dtype=np.float32)
    for i, channel in enumerate(channels):
        crop = np.where(crop_mask, channel[rows, cols], 0)
        out[i, top:top + extent_h, left:left + extent_w] = crop
    return out


def preprocess_record(
    record: SliceRecord,
    channels: Sequence[str] = CHANNELS["both"],
    canvas: int = 205,
    dilation_radius: int = DEFAULT_DILATION,
) -> SliceSample:
    """
    Load one record and produce its canonical sample.

    Each channel is z-scored over the full slice, then masked with the
    dilated tumor mask and embedded on the canvas.
    """
    normalized = []
    for channel in channels:
        image = read_tensor_file(getattr(record, channel)).data
        try:
            normalized.append(zscore(image))
        except DegenerateImageError as e:
            raise DegenerateImageError(f"{record.patient_id}/{record.slice_index} {channel}: {e}")
    mask = dilate_mask(read_tensor_file(record.mask).data, dilation_radius)
    try:
        image = mask_and_embed(normalized, mask, canvas)
    except PreprocessError as e:
        raise type(e)(f"{record.patient_id}/{record.slice_index}: {e}") from e
    return SliceSample(
        image=image,
        label=record.label,
        patient_id=record.patient_id,
        slice_index=record.slice_index,
    )


def preprocess_records(
    records: Sequence[SliceRecord],
    channels: Sequence[str] = CHANNELS["both"],
    canvas: int = 205,
    dilation_radius: int = DEFAULT_DILATION,
    workers: int = 1,
    progress_callback: Optional[Callable[[int, int], None]] = None,
) -> list[SliceSample]:
    """
    Preprocess records in input order, optionally on a thread pool.

    Args:
        progress_callback: Optional callback(done, total)
    """
    total = len(records)

    def run(record: SliceRecord) -> SliceSample:
        return preprocess_record(record, channels, canvas, dilation_radius)

    def collect(results) -> list[SliceSample]:
        samples = []
        for i, sample in enumerate(results, start=1):
            samples.append(sample)
            if progress_callback:
                progress_callback(i, total)
        return samples

    if workers <= 1:
        return collect(map(run, records))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return collect(pool.map(run, records))
