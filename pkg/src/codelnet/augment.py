"""
Label-preserving geometric augmentation.

A draw combines a rotation about the canvas center (bilinear, zero fill),
an integer translation (zero fill) and horizontal/vertical flips, applied
in that order and identically to every channel.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .preprocess import SliceSample
from .utils import derive_rng


class AugmentError(Exception):
    """Augmentation parameters are invalid."""

    pass


@dataclass(frozen=True)
class AugmentParams:
    max_shift: int = 20  # pixels
    max_rotation: float = 20.0  # degrees
    flip_probability: float = 0.5

    def validate(self, canvas: Optional[int] = None) -> None:
        if self.max_shift < 0:
            raise AugmentError(f"max_shift must be >= 0, got {self.max_shift}")
        if canvas is not None and 2 * self.max_shift >= canvas:
            raise AugmentError(
                f"max_shift {self.max_shift} must be below half the canvas ({canvas})"
            )
        if not 0 <= self.max_rotation <= 180:
            raise AugmentError(f"max_rotation must be in [0, 180], got {self.max_rotation}")
        if not 0 <= self.flip_probability <= 1:
            raise AugmentError(
                f"flip_probability must be in [0, 1], got {self.flip_probability}"
            )


@dataclass(frozen=True)
class AugmentDraw:
    """One concrete random combination of transforms."""

    dy: int = 0
    dx: int = 0
    angle: float = 0.0  # degrees, counter-clockwise
    flip_h: bool = False
    flip_v: bool = False

    @property
    def is_identity(self) -> bool:
        return self == AugmentDraw()

    def tag(self) -> str:
        flips = ("h" if self.flip_h else "") + ("v" if self.flip_v else "")
        return f"rot={self.angle:.2f},dy={self.dy},dx={self.dx},flip={flips or '-'}"


def draw_augmentation(params: AugmentParams, rng: np.random.Generator) -> AugmentDraw:
    """Draw shift, angle and flips from `rng` in a fixed order."""
    dy = int(rng.integers(-params.max_shift, params.max_shift + 1))
    dx = int(rng.integers(-params.max_shift, params.max_shift + 1))
    angle = float(rng.uniform(-params.max_rotation, params.max_rotation))
    flip_h = bool(rng.random() < params.flip_probability)
    flip_v = bool(rng.random() < params.flip_probability)
    return AugmentDraw(dy=dy, dx=dx, angle=angle, flip_h=flip_h, flip_v=flip_v)


def rotate(image: np.ndarray, angle: float) -> np.ndarray:
    """
    Rotate [C, H, W] about the center by `angle` degrees with bilinear
    interpolation and zero fill.
    """
    if angle == 0:
        return image.copy()
    _, h, w = image.shape
    theta = np.deg2rad(angle)
    cos, sin = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")

    # inverse map: output pixel -> source coordinate
    # rounding snaps right-angle rotations onto exact pixel centers
    src_y = np.round(cy + cos * yy - sin * xx, 9)
    src_x = np.round(cx + sin * yy + cos * xx, 9)

    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    fy = src_y - y0
    fx = src_x - x0

    source = image.astype(np.float64)
    out = np.zeros(image.shape, dtype=np.float64)
    for oy, ox, weight in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        ys, xs = y0 + oy, x0 + ox
        valid = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w) & (weight > 0)
        out[:, valid] += weight[valid] * source[:, ys[valid], xs[valid]]
    return out.astype(image.dtype)


def translate(image: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Shift [C, H, W] by (dy, dx) pixels, filling with zeros."""
    _, h, w = image.shape
    out = np.zeros_like(image)
    if abs(dy) >= h or abs(dx) >= w:
        return out
    dst_rows = slice(max(dy, 0), h + min(dy, 0))
    src_rows = slice(max(-dy, 0), h - max(dy, 0))
    dst_cols = slice(max(dx, 0), w + min(dx, 0))
    src_cols = slice(max(-dx, 0), w - max(dx, 0))
    out[:, dst_rows, dst_cols] = image[:, src_rows, src_cols]
    return out


def apply_augmentation(image: np.ndarray, draw: AugmentDraw) -> np.ndarray:
    """Apply rotation, then translation, then flips to a [C, H, W] image."""
    out = rotate(image, draw.angle)
    if draw.dy or draw.dx:
        out = translate(out, draw.dy, draw.dx)
    if draw.flip_h:
        out = out[:, :, ::-1]
    if draw.flip_v:
        out = out[:, ::-1, :]
    return np.ascontiguousarray(out)


def augment_sample(
    sample: SliceSample,
    params: AugmentParams,
    rng: np.random.Generator,
    draw: Optional[AugmentDraw] = None,
) -> SliceSample:
    """
    Randomly transformed copy of `sample`; label and provenance are kept.

    Args:
        draw: Force a specific combination instead of drawing from `rng`
    """
    draw = draw if draw is not None else draw_augmentation(params, rng)
    return replace(sample, image=apply_augmentation(sample.image, draw), augmentation=draw.tag())


def build_epoch_training_set(
    samples: Sequence[SliceSample],
    k: int,
    epoch: int,
    master_seed: int,
    params: Optional[AugmentParams] = None,
    workers: int = 1,
) -> list[SliceSample]:
    """
    One epoch's training samples.

    k = 0 keeps the originals; k >= 1 replaces each sample by k augmented
    copies. Copy j of sample i draws from the stream
    (master_seed, epoch, i, j), so results do not depend on `workers`.
    The set is then shuffled with a per-epoch stream.
    """
    if k < 0:
        raise AugmentError(f"Augmentation fold must be >= 0, got {k}")
    params = params or AugmentParams()

    if k == 0:
        expanded = list(samples)
    else:
        jobs = [(i, j) for i in range(len(samples)) for j in range(k)]

        def run(job: tuple[int, int]) -> SliceSample:
            i, j = job
            return augment_sample(samples[i], params, derive_rng(master_seed, "augment", epoch, i, j))

        if workers <= 1:
            expanded = [run(job) for job in jobs]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                expanded = list(pool.map(run, jobs))

    order = derive_rng(master_seed, "shuffle", epoch).permutation(len(expanded))
    return [expanded[i] for i in order]
