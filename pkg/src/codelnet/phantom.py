"""
Synthetic two-channel, two-class slice dataset.

Each patient gets an elliptical tumor on a noisy tissue patch, sampled as
three slices with slightly different size and position. Codeleted patients
carry a textural cue, internal striping plus a lobed boundary, scaled by
the signal strength. The stripes average out over the tumor and the lobed
boundary encloses the same area as the plain ellipse, so neither mean
intensity nor mask area tells the classes apart.
"""

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .dataset import Manifest, SliceRecord, write_manifest
from .preprocess import dilate_mask
from .tensorfile import write_tensor_file
from .utils import derive_rng

SLICE_SCALES = (0.85, 1.0, 0.85)  # middle slice sits at the tumor equator
STRIPE_PERIOD = 4.0  # pixels
STRIPE_AMPLITUDE = 0.6
BOUNDARY_IRREGULARITY = 0.2
TISSUE_LEVEL = 0.5
TUMOR_LEVELS = {"t1c": 1.0, "t2": 1.5}


class PhantomError(Exception):
    """Phantom parameters are infeasible."""

    pass


@dataclass
class PhantomConfig:
    patients_per_class: int = 30
    slices: int = 3
    canvas: int = 64
    image_size: int = 80
    radius_range: tuple[float, float] = (6.0, 12.0)
    signal: float = 1.0
    noise: float = 0.1
    dilation_radius: int = 5
    center_jitter: int = 2
    seed: int = 0

    def validate(self) -> None:
        if self.patients_per_class < 1:
            raise PhantomError(f"patients_per_class must be >= 1, got {self.patients_per_class}")
        if not 1 <= self.slices <= len(SLICE_SCALES):
            raise PhantomError(f"slices must be in 1..{len(SLICE_SCALES)}, got {self.slices}")
        if not 0 <= self.signal <= 1:
            raise PhantomError(f"signal must be in [0, 1], got {self.signal}")
        if self.noise < 0:
            raise PhantomError(f"noise must be >= 0, got {self.noise}")
        low, high = self.radius_range
        if not 0 < low <= high:
            raise PhantomError(f"radius_range must satisfy 0 < low <= high, got {self.radius_range}")
        if self.dilation_radius < 0 or self.center_jitter < 0:
            raise PhantomError("dilation_radius and center_jitter must be >= 0")

        reach = high * (1 + BOUNDARY_IRREGULARITY) + self.dilation_radius
        needed = int(np.ceil(2 * reach)) + 1
        if needed > self.canvas:
            raise PhantomError(
                f"Tumor radius up to {high:g} needs a {needed}px canvas after dilation, "
                f"canvas is {self.canvas}"
            )
        if needed + 4 * self.center_jitter > self.image_size:
            raise PhantomError(
                f"Tumor radius up to {high:g} with jitter {self.center_jitter} needs "
                f"{needed + 4 * self.center_jitter}px images, image_size is {self.image_size}"
            )


@dataclass
class PhantomResult:
    manifest_path: Path
    manifest: Manifest
    files_written: int
    duration_seconds: float = 0.0

    @property
    def records(self) -> int:
        return len(self.manifest)


def _slice_arrays(
    config: PhantomConfig,
    label: int,
    geometry: dict,
    scale: float,
    rng: np.random.Generator,
) -> dict[str, np.ndarray]:
    size = config.image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    center = (size - 1) / 2.0
    jitter = config.center_jitter
    cy = center + geometry["offset"][0] + rng.integers(-jitter, jitter + 1)
    cx = center + geometry["offset"][1] + rng.integers(-jitter, jitter + 1)

    dy, dx = yy - cy, xx - cx
    o = geometry["orientation"]
    u = dy * np.cos(o) + dx * np.sin(o)
    v = -dy * np.sin(o) + dx * np.cos(o)
    ry, rx = geometry["radii"][0] * scale, geometry["radii"][1] * scale
    rho = np.hypot(u / ry, v / rx)
    phi = np.arctan2(u / ry, v / rx)

    cue = config.signal if label == 1 else 0.0
    irregularity = BOUNDARY_IRREGULARITY * cue
    # rescaled so the lobed outline encloses the ellipse area pi*ry*rx
    boundary = (1 + irregularity * np.sin(geometry["lobes"] * phi + geometry["phase"])) / np.sqrt(
        1 + irregularity**2 / 2
    )
    mask = rho <= boundary
    support = dilate_mask(mask.astype(np.float32), config.dilation_radius) > 0

    a = geometry["stripe_angle"]
    stripes = np.sin(2 * np.pi * (yy * np.cos(a) + xx * np.sin(a)) / STRIPE_PERIOD)
    if mask.any():
        stripes -= stripes[mask].mean()

    arrays = {}
    for channel, level in TUMOR_LEVELS.items():
        tumor = level + STRIPE_AMPLITUDE * cue * stripes
        image = np.where(mask, tumor, TISSUE_LEVEL) + config.noise * rng.standard_normal(mask.shape)
        arrays[channel] = np.where(support, image, 0.0).astype(np.float32)
    arrays["mask"] = mask.astype(np.float32)
    return arrays


def generate_phantom(
    config: PhantomConfig,
    out_dir: Union[str, Path],
    progress_callback: Optional[Callable[[int, int], None]] = None,
) -> PhantomResult:
    """
    Write tensor files and a manifest for a synthetic dataset.

    Patients are named PH0000, PH0001, ...; even numbers are nondeleted,
    odd numbers codeleted. Files go to `out_dir/slices/` and the manifest to
    `out_dir/manifest.csv`. Output is a pure function of the config.

    Args:
        config: Generation parameters
        out_dir: Output directory (created if missing)
        progress_callback: Optional callback(patients_done, patients_total)

    Returns:
        PhantomResult

    Raises:
        PhantomError: Infeasible geometry or parameters
        OSError: Output cannot be written
    """
    config.validate()
    start = time.monotonic()
    out_dir = Path(out_dir)
    slice_dir = out_dir / "slices"
    slice_dir.mkdir(parents=True, exist_ok=True)

    total = 2 * config.patients_per_class
    records = []
    files = 0
    low, high = config.radius_range
    for n in range(total):
        label = n % 2
        patient_id = f"PH{n:04d}"
        rng = derive_rng(config.seed, "phantom", n)
        geometry = {
            "radii": rng.uniform(low, high, size=2),
            "orientation": rng.uniform(0, np.pi),
            "offset": rng.integers(-config.center_jitter, config.center_jitter + 1, size=2),
            "lobes": int(rng.integers(3, 7)),
            "phase": rng.uniform(0, 2 * np.pi),
            "stripe_angle": rng.uniform(0, np.pi),
        }
        for s in range(config.slices):
            arrays = _slice_arrays(config, label, geometry, SLICE_SCALES[s], rng)
            paths = {}
            for name, array in arrays.items():
                paths[name] = write_tensor_file(array, slice_dir / f"{patient_id}_{s}_{name}.tsr")
                files += 1
            records.append(
                SliceRecord(
                    patient_id=patient_id,
                    slice_index=s,
                    label=label,
                    t1c=paths["t1c"],
                    t2=paths["t2"],
                    mask=paths["mask"],
                )
            )
        if progress_callback:
            progress_callback(n + 1, total)

    manifest_path = write_manifest(records, out_dir / "manifest.csv")
    return PhantomResult(
        manifest_path=manifest_path,
        manifest=Manifest(records=tuple(records), root=out_dir),
        files_written=files,
        duration_seconds=time.monotonic() - start,
    )
