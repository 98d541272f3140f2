"""Datasets, non-IID partitioning and data-poisoning transforms."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DEFAULT_TARGET_LABEL = 5


class IdxFormatError(ValueError):
    """Malformed or inconsistent IDX files."""


class PartitionError(RuntimeError):
    """A Dirichlet partition could not give every party at least one sample."""


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ValueError("features must be a non-empty (n, d) matrix")
        if labels.shape != (features.shape[0],):
            raise ValueError("need exactly one label per feature row")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes)


@dataclass(frozen=True)
class PartitionPlan:
    assignments: list
    concentration: float

    @property
    def num_parties(self) -> int:
        return len(self.assignments)

    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]


@dataclass(frozen=True)
class TriggerPattern:
    pixel_indices: tuple
    pixel_value: float
    target_label: int = DEFAULT_TARGET_LABEL

    def validate(self, dim: int, num_classes: int) -> None:
        if not self.pixel_indices:
            raise ValueError("trigger needs at least one pixel")
        if min(self.pixel_indices) < 0 or max(self.pixel_indices) >= dim:
            raise ValueError(f"trigger pixels must lie in [0, {dim})")
        if not 0 <= self.target_label < num_classes:
            raise ValueError(f"target label must lie in [0, {num_classes})")


def _lattice_means(num_classes: int, dim: int, separation: float) -> np.ndarray:
    # class k sits on axis k mod dim, flipped/stretched when classes outnumber axes
    means = np.zeros((num_classes, dim))
    for k in range(num_classes):
        axis = k % dim
        wrap = k // dim
        sign = -1.0 if wrap % 2 else 1.0
        means[k, axis] = sign * separation * (1 + wrap // 2)
    return means


def synth_blobs(num_classes: int, dim: int, samples_per_class: int, spread: float,
                seed: int, separation: float = 2.0) -> LabeledDataset:
    """Isotropic Gaussian clusters, one per class, centred on a fixed lattice.

    Samples are ordered class by class; ``spread`` is the per-coordinate
    standard deviation around each class mean.
    """
    if num_classes < 1 or dim < 1 or samples_per_class < 1:
        raise ValueError("num_classes, dim and samples_per_class must be positive")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    rng = np.random.default_rng(seed)
    means = _lattice_means(num_classes, dim, separation)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    noise = rng.standard_normal((labels.size, dim)) * spread
    return LabeledDataset(means[labels] + noise, labels, num_classes)


def _read_header(buf: bytes, n_ints: int, path) -> tuple:
    need = 4 * n_ints
    if len(buf) < need:
        raise IdxFormatError(f"{path}: truncated header")
    return struct.unpack(f">{n_ints}I", buf[:need])


def load_idx(images_path, labels_path, num_classes: int = 10) -> LabeledDataset:
    """Read an IDX image/label pair (MNIST layout). Pixels are scaled to [0, 1]."""
    img = Path(images_path).read_bytes()
    lab = Path(labels_path).read_bytes()

    magic, count, rows, cols = _read_header(img, 4, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(f"{images_path}: bad magic 0x{magic:08x}")
    pixels = count * rows * cols
    if len(img) - 16 < pixels:
        raise IdxFormatError(f"{images_path}: truncated, expected {pixels} pixel bytes")

    lmagic, lcount = _read_header(lab, 2, labels_path)
    if lmagic != IDX_LABELS_MAGIC:
        raise IdxFormatError(f"{labels_path}: bad magic 0x{lmagic:08x}")
    if len(lab) - 8 < lcount:
        raise IdxFormatError(f"{labels_path}: truncated, expected {lcount} labels")
    if lcount != count:
        raise IdxFormatError(f"count mismatch: {count} images vs {lcount} labels")

    images = np.frombuffer(img, dtype=np.uint8, count=pixels, offset=16)
    labels = np.frombuffer(lab, dtype=np.uint8, count=lcount, offset=8)
    features = images.reshape(count, rows * cols).astype(np.float64) / 255.0
    return LabeledDataset(features, labels.astype(np.int64), num_classes)


def dirichlet_partition(ds: LabeledDataset, num_parties: int, concentration: float,
                        seed: int, max_retries: int = 100) -> PartitionPlan:
    """Split each class over parties by a symmetric Dirichlet draw.

    The whole draw is repeated until no party is empty; after ``max_retries``
    failed draws a :class:`PartitionError` is raised.
    """
    if num_parties < 1:
        raise ValueError("num_parties must be >= 1")
    if not concentration > 0:
        raise ValueError("concentration must be positive")
    rng = np.random.default_rng(seed)
    by_class = [np.flatnonzero(ds.labels == k) for k in range(ds.num_classes)]
    for _ in range(max_retries):
        buckets = [[] for _ in range(num_parties)]
        for idx in by_class:
            if idx.size == 0:
                continue
            idx = rng.permutation(idx)
            props = rng.dirichlet(np.full(num_parties, concentration))
            cuts = np.floor(np.cumsum(props)[:-1] * idx.size).astype(np.int64)
            for party, chunk in enumerate(np.split(idx, cuts)):
                buckets[party].append(chunk)
        assignments = [np.sort(np.concatenate(b)) if b else np.empty(0, np.int64)
                       for b in buckets]
        if all(a.size > 0 for a in assignments):
            return PartitionPlan(assignments, float(concentration))
    raise PartitionError(
        f"no non-empty partition for {num_parties} parties after {max_retries} draws")


def flip_labels(ds: LabeledDataset) -> LabeledDataset:
    """Map every label k to K - k - 1."""
    return LabeledDataset(ds.features, ds.num_classes - 1 - ds.labels, ds.num_classes)


def image_shape(dim: int) -> tuple[int, int]:
    """Closest-to-square (rows, cols) factorisation of ``dim``."""
    rows = int(math.isqrt(dim))
    while dim % rows:
        rows -= 1
    return rows, dim // rows


def default_trigger(ds: LabeledDataset, target_label: int = DEFAULT_TARGET_LABEL,
                    shape: tuple[int, int] | None = None) -> TriggerPattern:
    """3x3 block of max-intensity pixels in the top-left corner of the image.

    Flat feature vectors are viewed as the closest-to-square image when no
    ``shape`` is given; "max intensity" is the largest feature value present.
    """
    rows, cols = shape or image_shape(ds.dim)
    idx = tuple(r * cols + c for r in range(min(3, rows)) for c in range(min(3, cols)))
    trig = TriggerPattern(idx, float(ds.features.max()), target_label)
    trig.validate(ds.dim, ds.num_classes)
    return trig


def apply_trigger(features: np.ndarray, trig: TriggerPattern) -> np.ndarray:
    out = np.array(features, dtype=np.float64, copy=True)
    out[..., list(trig.pixel_indices)] = trig.pixel_value
    return out


def inject_trigger(ds: LabeledDataset, trig: TriggerPattern, fraction: float,
                   seed: int) -> LabeledDataset:
    """Stamp the trigger on ceil(fraction * n) seeded rows and relabel them."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    trig.validate(ds.dim, ds.num_classes)
    n = len(ds)
    count = math.ceil(fraction * n)
    if count == 0:
        return ds
    rows = np.random.default_rng(seed).choice(n, size=count, replace=False)
    features = np.array(ds.features, copy=True)
    labels = np.array(ds.labels, copy=True)
    features[rows] = apply_trigger(features[rows], trig)
    labels[rows] = trig.target_label
    return LabeledDataset(features, labels, ds.num_classes)


def train_test_split(ds: LabeledDataset, test_fraction: float, seed: int
                     ) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded holdout split; the test part is never handed to parties."""
    n = len(ds)
    n_test = int(round(test_fraction * n))
    if not 0 < n_test < n:
        raise ValueError("test_fraction leaves an empty train or test split")
    perm = np.random.default_rng(seed).permutation(n)
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))
