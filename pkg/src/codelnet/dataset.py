"""
Dataset catalog, train/validation/test splitting and balanced sampling.

A manifest is a UTF-8 text file with one slice per line:

    patient_id,slice_index,label,t1c_path,t2_path,mask_path

Labels are `nondeleted` (class 0) or `codeleted` (class 1). Paths are
relative to the manifest's directory. Lines starting with `#` are comments.
"""

import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Protocol, Sequence, TypeVar, Union

import numpy as np

from .tensorfile import TensorFileError, read_tensor_file, read_tensor_header
from .utils import derive_rng

LABELS = {"nondeleted": 0, "codeleted": 1}
LABEL_NAMES = {v: k for k, v in LABELS.items()}
CLASSES = (0, 1)

GROUPINGS = ("patient", "slice")

MANIFEST_HEADER = "# patient_id,slice_index,label,t1c_path,t2_path,mask_path"


class ManifestError(Exception):
    """Manifest line is malformed or references bad tensor files."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message)
        self.line = line


class SplitError(Exception):
    """Requested split cannot be satisfied."""

    def __init__(self, message: str, suggestion: Optional[int] = None):
        super().__init__(message)
        self.suggestion = suggestion


class SamplingError(Exception):
    """Pool too small for the requested balanced draw."""

    pass


class Labeled(Protocol):
    label: int


L = TypeVar("L", bound=Labeled)


@dataclass(frozen=True)
class SliceRecord:
    """One labeled slice with its two channels and tumor mask on disk."""

    patient_id: str
    slice_index: int
    label: int
    t1c: Path
    t2: Path
    mask: Path

    @property
    def key(self) -> tuple[str, int]:
        return (self.patient_id, self.slice_index)

    @property
    def label_name(self) -> str:
        return LABEL_NAMES[self.label]


@dataclass(frozen=True)
class Manifest:
    """Ordered slice records and the directory their paths are relative to."""

    records: tuple[SliceRecord, ...]
    root: Path

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[SliceRecord]:
        return iter(self.records)

    def class_counts(self) -> dict[int, int]:
        return {c: sum(1 for r in self.records if r.label == c) for c in CLASSES}

    def patients(self) -> list[str]:
        return list(dict.fromkeys(r.patient_id for r in self.records))


def _resolve(root: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else root / path


def parse_manifest(path: Union[str, Path], check_files: bool = True) -> Manifest:
    """
    Parse and validate a manifest.

    Args:
        path: Manifest file
        check_files: Verify that tensor files exist, are 2D, share a shape,
                     and that masks are binary

    Returns:
        Manifest with records in file order

    Raises:
        ManifestError: With the 1-based line number of the first bad record
    """
    path = Path(path)
    root = path.parent
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"Cannot read manifest {path}: {e}") from e

    records: list[SliceRecord] = []
    seen: dict[tuple[str, int], int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        where = f"{path}:{lineno}"
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 6:
            raise ManifestError(f"{where}: expected 6 fields, got {len(fields)}", lineno)
        patient_id, slice_token, label_token, t1c, t2, mask = fields
        if not patient_id:
            raise ManifestError(f"{where}: empty patient_id", lineno)
        try:
            slice_index = int(slice_token)
        except ValueError:
            raise ManifestError(f"{where}: slice_index {slice_token!r} is not an integer", lineno)
        if label_token not in LABELS:
            raise ManifestError(
                f"{where}: unknown label {label_token!r} (expected nondeleted or codeleted)",
                lineno,
            )
        key = (patient_id, slice_index)
        if key in seen:
            raise ManifestError(
                f"{where}: duplicate record {patient_id}/{slice_index} (first on line {seen[key]})",
                lineno,
            )
        seen[key] = lineno

        record = SliceRecord(
            patient_id=patient_id,
            slice_index=slice_index,
            label=LABELS[label_token],
            t1c=_resolve(root, t1c),
            t2=_resolve(root, t2),
            mask=_resolve(root, mask),
        )
        if check_files:
            _check_record_files(record, where, lineno)
        records.append(record)

    return Manifest(records=tuple(records), root=root)


def _check_record_files(record: SliceRecord, where: str, lineno: int) -> None:
    name = f"{record.patient_id}/{record.slice_index}"
    shapes = {}
    for channel in ("t1c", "t2", "mask"):
        file = getattr(record, channel)
        if not file.is_file():
            raise ManifestError(f"{where}: {name} {channel} file not found: {file}", lineno)
        try:
            shapes[channel] = read_tensor_header(file)
        except TensorFileError as e:
            raise ManifestError(f"{where}: {name} {channel}: {e}", lineno) from e
    if len(shapes["t1c"]) != 2:
        raise ManifestError(f"{where}: {name} t1c must be 2D, got shape {shapes['t1c']}", lineno)
    for channel in ("t2", "mask"):
        if shapes[channel] != shapes["t1c"]:
            raise ManifestError(
                f"{where}: {name} {channel} shape {shapes[channel]} differs from "
                f"t1c shape {shapes['t1c']}",
                lineno,
            )
    try:
        mask = read_tensor_file(record.mask).data
    except TensorFileError as e:
        raise ManifestError(f"{where}: {name} mask: {e}", lineno) from e
    if not np.all((mask == 0) | (mask == 1)):
        raise ManifestError(f"{where}: {name} mask is not binary", lineno)


def write_manifest(records: Sequence[SliceRecord], path: Union[str, Path]) -> Path:
    """Write records in manifest format, with paths relative to the manifest directory."""
    path = Path(path)
    root = path.parent.resolve()

    def rel(p: Path) -> str:
        try:
            return Path(os.path.relpath(p.resolve(), root)).as_posix()
        except ValueError:
            return str(p.resolve())

    lines = [MANIFEST_HEADER]
    for r in records:
        lines.append(
            f"{r.patient_id},{r.slice_index},{LABEL_NAMES[r.label]},"
            f"{rel(r.t1c)},{rel(r.t2)},{rel(r.mask)}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@dataclass(frozen=True)
class SplitSpec:
    """How to carve test and validation sets out of a manifest."""

    test_per_class: int = 45
    train_per_class: Optional[int] = 126  # None: largest balanced draw the pool allows
    validation_fraction: float = 0.2
    grouping: str = "patient"
    seed: int = 0

    def validate(self) -> None:
        if self.grouping not in GROUPINGS:
            raise SplitError(f"grouping must be one of {', '.join(GROUPINGS)}, got {self.grouping!r}")
        if self.test_per_class < 0:
            raise SplitError(f"test_per_class must be >= 0, got {self.test_per_class}")
        if self.train_per_class is not None and self.train_per_class < 1:
            raise SplitError(f"train_per_class must be >= 1, got {self.train_per_class}")
        if not 0 <= self.validation_fraction < 1:
            raise SplitError(
                f"validation_fraction must be in [0, 1), got {self.validation_fraction}"
            )


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint test, validation and training-pool records, each in manifest order."""

    test: tuple[SliceRecord, ...]
    validation: tuple[SliceRecord, ...]
    pool: tuple[SliceRecord, ...]
    train_per_class: int

    def subset(self, name: str) -> tuple[SliceRecord, ...]:
        if name == "all":
            return self.test + self.validation + self.pool
        if name not in ("test", "validation", "pool"):
            raise ValueError(f"Unknown subset {name!r}")
        return getattr(self, name)

    def rows(self) -> list[tuple[str, int, str]]:
        """(patient_id, slice_index, subset) for every record, in manifest order of subsets."""
        rows = []
        for name in ("test", "validation", "pool"):
            rows.extend((r.patient_id, r.slice_index, name) for r in getattr(self, name))
        return rows


def _reachable_suffixes(sizes: Sequence[int], cap: int) -> list[np.ndarray]:
    """suffix[i][s] is True iff some subset of sizes[i:] sums to s (s <= cap)."""
    suffix = [np.zeros(cap + 1, dtype=bool) for _ in range(len(sizes) + 1)]
    suffix[-1][0] = True
    for i in range(len(sizes) - 1, -1, -1):
        reach = suffix[i + 1].copy()
        if sizes[i] <= cap:
            reach[sizes[i]:] |= suffix[i + 1][: cap + 1 - sizes[i]]
        suffix[i] = reach
    return suffix


def _nearest(reach: np.ndarray, target: int) -> int:
    feasible = np.flatnonzero(reach)
    return int(feasible[np.argmin(np.abs(feasible - target))])


def _select_units(sizes: Sequence[int], target: int) -> Optional[list[int]]:
    """
    Indices of units summing exactly to `target`, preferring earlier units.

    Returns None if no subset reaches the target.
    """
    suffix = _reachable_suffixes(sizes, max(target, 0))
    if target < 0 or not suffix[0][target]:
        return None
    chosen = []
    remaining = target
    for i, size in enumerate(sizes):
        if remaining == 0:
            break
        if size <= remaining and suffix[i + 1][remaining - size]:
            chosen.append(i)
            remaining -= size
    return chosen


def _class_units(
    records: Sequence[SliceRecord], label: int, grouping: str
) -> list[list[SliceRecord]]:
    members = [r for r in records if r.label == label]
    if grouping == "slice":
        return [[r] for r in sorted(members, key=lambda r: r.key)]
    by_patient: dict[str, list[SliceRecord]] = defaultdict(list)
    for r in members:
        by_patient[r.patient_id].append(r)
    return [by_patient[p] for p in sorted(by_patient)]


def _draw(
    units: list[list[SliceRecord]],
    target: int,
    seed: int,
    stream: str,
    label: int,
    what: str,
    exact: bool,
) -> tuple[list[list[SliceRecord]], list[list[SliceRecord]]]:
    order = derive_rng(seed, stream, label).permutation(len(units))
    shuffled = [units[i] for i in order]
    sizes = [len(u) for u in shuffled]
    total = sum(sizes)
    if target > total:
        raise SplitError(
            f"Requested {target} {what} slices of class {LABEL_NAMES[label]}, "
            f"only {total} available",
            suggestion=total,
        )
    chosen = _select_units(sizes, target)
    if chosen is None:
        nearest = _nearest(_reachable_suffixes(sizes, total)[0], target)
        if exact:
            raise SplitError(
                f"Cannot select exactly {target} {what} slices of class {LABEL_NAMES[label]} "
                f"with whole patients; nearest feasible count is {nearest}",
                suggestion=nearest,
            )
        chosen = _select_units(sizes, nearest)
    picked = set(chosen)
    return (
        [u for i, u in enumerate(shuffled) if i in picked],
        [u for i, u in enumerate(shuffled) if i not in picked],
    )


def split_dataset(manifest: Union[Manifest, Sequence[SliceRecord]], spec: SplitSpec) -> DatasetSplit:
    """
    Split into test, validation and training pool.

    The test set holds exactly `test_per_class` slices per class. The
    validation set takes `validation_fraction` of each class's remaining
    slices (nearest count reachable with whole patients). With patient
    grouping all slices of a patient land in the same subset.

    Raises:
        SplitError: Unsatisfiable counts; `suggestion` carries the nearest feasible value
    """
    spec.validate()
    records = list(manifest)
    position = {r.key: i for i, r in enumerate(records)}

    if spec.grouping == "patient":
        labels_by_patient: dict[str, set[int]] = defaultdict(set)
        for r in records:
            labels_by_patient[r.patient_id].add(r.label)
        mixed = sorted(p for p, labels in labels_by_patient.items() if len(labels) > 1)
        if mixed:
            raise SplitError(f"Patient {mixed[0]} has slices of both classes; use grouping=slice")

    test: list[SliceRecord] = []
    validation: list[SliceRecord] = []
    pool: list[SliceRecord] = []
    for label in CLASSES:
        units = _class_units(records, label, spec.grouping)
        test_units, rest = _draw(
            units, spec.test_per_class, spec.seed, "split-test", label, "test", exact=True
        )
        remaining = sum(len(u) for u in rest)
        val_target = int(round(spec.validation_fraction * remaining))
        val_units, pool_units = _draw(
            rest, val_target, spec.seed, "split-validation", label, "validation", exact=False
        )
        for units_, out in ((test_units, test), (val_units, validation), (pool_units, pool)):
            for unit in units_:
                out.extend(unit)

    pool_counts = [sum(1 for r in pool if r.label == c) for c in CLASSES]
    largest = min(pool_counts)
    if spec.train_per_class is None:
        if largest < 1:
            raise SplitError("Training pool is missing a class after the test/validation split")
        train_per_class = largest
    else:
        train_per_class = spec.train_per_class
        if train_per_class > largest:
            raise SplitError(
                f"Requested {train_per_class} training slices per class, the pool holds "
                f"{pool_counts[0]} nondeleted and {pool_counts[1]} codeleted",
                suggestion=largest,
            )

    def ordered(items: list[SliceRecord]) -> tuple[SliceRecord, ...]:
        return tuple(sorted(items, key=lambda r: position[r.key]))

    return DatasetSplit(
        test=ordered(test),
        validation=ordered(validation),
        pool=ordered(pool),
        train_per_class=train_per_class,
    )


def balanced_sample(
    pool: Sequence[L],
    per_class_count: int,
    epoch: int,
    master_seed: int,
) -> list[L]:
    """
    Draw `per_class_count` items of each class without replacement.

    The draw is a pure function of (master_seed, epoch): different epochs see
    different subsets, reruns see the same ones.

    Raises:
        SamplingError: A class has fewer than `per_class_count` members
    """
    if per_class_count < 1:
        raise SamplingError(f"per_class_count must be >= 1, got {per_class_count}")
    rng = derive_rng(master_seed, "balanced", epoch)
    chosen: list[L] = []
    for label in CLASSES:
        members = [item for item in pool if item.label == label]
        if len(members) < per_class_count:
            raise SamplingError(
                f"Class {LABEL_NAMES[label]} has {len(members)} items in the pool, "
                f"{per_class_count} requested"
            )
        picks = rng.choice(len(members), size=per_class_count, replace=False)
        chosen.extend(members[i] for i in sorted(picks))
    return chosen
