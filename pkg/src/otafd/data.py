"""Datasets: synthetic Gaussian blobs, device partitioning and MNIST IDX files."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .transceiver import ClassPartition

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray  # 1..K

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if x.ndim != 2:
            raise ValueError("features must be a (samples, dims) matrix")
        if x.shape[0] != y.size:
            raise ValueError(f"{x.shape[0]} feature rows but {y.size} labels")
        if y.size and y.min() < 1:
            raise ValueError("labels are 1-indexed")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.size

    def subset(self, idx) -> LabeledDataset:
        return LabeledDataset(self.features[idx], self.labels[idx])

    def class_counts(self, num_classes: int) -> np.ndarray:
        return np.bincount(self.labels - 1, minlength=num_classes)[:num_classes]


@dataclass(frozen=True)
class PartitionSpec:
    num_devices: int
    mode: str = "iid"
    alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("iid", "dirichlet"):
            raise ValueError(f"unknown partition mode {self.mode!r}")
        if self.mode == "dirichlet" and not self.alpha > 0:
            raise ValueError("dirichlet alpha must be positive")
        if self.num_devices < 1:
            raise ValueError("num_devices must be >= 1")


def simplex_means(num_classes: int, dims: int, separation: float) -> np.ndarray:
    """Class means forming a regular simplex with pairwise distance `separation`."""
    k = num_classes
    if k == 1:
        return np.zeros((1, dims))
    if dims < k - 1:
        raise ValueError(f"a regular {k}-point simplex needs at least {k - 1} dims, got {dims}")
    vertices = np.eye(k) - 1.0 / k
    # orthonormal basis of the (k-1)-dim hyperplane holding the centred vertices
    basis = np.linalg.svd(vertices)[2][: k - 1]
    coords = vertices @ basis.T * (separation / np.sqrt(2.0))
    out = np.zeros((k, dims))
    out[:, : k - 1] = coords
    return out


def synth_dataset(num_classes: int, dims: int, per_class: int, separation: float, rng: np.random.Generator) -> LabeledDataset:
    """Unit-variance isotropic Gaussian blobs, `per_class` samples of each class in label order."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    means = simplex_means(num_classes, dims, separation)
    labels = np.repeat(np.arange(1, num_classes + 1), per_class)
    features = means[labels - 1] + rng.standard_normal((labels.size, dims))
    return LabeledDataset(features, labels)


def partition(dataset: LabeledDataset, spec: PartitionSpec, num_classes: int | None = None):
    """Split a dataset across devices.

    Returns (per-device datasets, ClassPartition, per-device index arrays).
    iid deals each class's samples round-robin with a counter that carries
    across classes; dirichlet draws per-class device shares from
    Dirichlet(alpha) and then moves single samples so no device is empty.
    """
    n, m = len(dataset), spec.num_devices
    if n == 0:
        raise ValueError("dataset is empty")
    if m > n:
        raise ValueError(f"{m} devices but only {n} samples")
    k = int(dataset.labels.max()) if num_classes is None else num_classes
    rng = np.random.default_rng(spec.seed)
    owner = np.empty(n, dtype=np.int64)
    if spec.mode == "iid":
        cursor = 0
        for c in range(1, k + 1):
            idx = np.flatnonzero(dataset.labels == c)
            owner[idx] = (cursor + np.arange(idx.size)) % m
            cursor += idx.size
    else:
        for c in range(1, k + 1):
            idx = rng.permutation(np.flatnonzero(dataset.labels == c))
            if idx.size == 0:
                continue
            shares = rng.dirichlet(np.full(m, spec.alpha))
            counts = rng.multinomial(idx.size, shares)
            owner[idx] = np.repeat(np.arange(m), counts)
        sizes = np.bincount(owner, minlength=m)
        for dev in np.flatnonzero(sizes == 0):
            donor = int(np.argmax(sizes))
            moved = np.flatnonzero(owner == donor)[-1]
            owner[moved] = dev
            sizes[donor] -= 1
            sizes[dev] += 1
    indices = [np.flatnonzero(owner == i) for i in range(m)]
    parts = [dataset.subset(ix) for ix in indices]
    counts = np.stack([p.class_counts(k) for p in parts])
    return parts, ClassPartition(counts), indices


def write_csv(dataset: LabeledDataset, path) -> None:
    """One row per sample, label in the last column."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row, label in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def read_csv(path) -> LabeledDataset:
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    return LabeledDataset(rows[:, :-1], rows[:, -1].astype(np.int64))


def read_idx_array(path) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an ndarray of its declared shape."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxFormatError("file too short for an IDX magic number", 0)
    zero, dtype_code, ndim = struct.unpack_from(">HBB", raw, 0)
    if zero != 0 or dtype_code != 0x08 or ndim not in (1, 3):
        raise IdxFormatError(f"bad magic number 0x{int.from_bytes(raw[:4], 'big'):08x}", 0)
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError("truncated dimension header", len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise IdxFormatError(f"truncated payload: expected {size} bytes", len(raw))
    if len(raw) > header + size:
        raise IdxFormatError("trailing bytes after payload", header + size)
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx_array(array: np.ndarray, path) -> None:
    a = np.ascontiguousarray(array, dtype=np.uint8)
    if a.ndim not in (1, 3):
        raise ValueError("IDX files here hold label vectors or image stacks")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, 0x08, a.ndim))
        fh.write(struct.pack(f">{a.ndim}I", *a.shape))
        fh.write(a.tobytes())


def read_idx(images_path, labels_path) -> LabeledDataset:
    """Pair an IDX image file with its label file; pixels scaled to [0, 1], labels shifted to 1..10."""
    images = read_idx_array(images_path)
    if images.ndim != 3:
        raise IdxFormatError(f"expected image magic 0x{IDX_IMAGES_MAGIC:08x}", 0)
    labels = read_idx_array(labels_path)
    if labels.ndim != 1:
        raise IdxFormatError(f"expected label magic 0x{IDX_LABELS_MAGIC:08x}", 0)
    if images.shape[0] != labels.size:
        raise ValueError(f"{images.shape[0]} images but {labels.size} labels")
    features = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return LabeledDataset(features, labels.astype(np.int64) + 1)


def read_idx_header(path) -> tuple[int, tuple[int, ...]]:
    """(magic, dims) without loading the payload."""
    with open(path, "rb") as fh:
        head = fh.read(4)
        if len(head) < 4:
            raise IdxFormatError("file too short for an IDX magic number", 0)
        magic = int.from_bytes(head, "big")
        if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
            raise IdxFormatError(f"bad magic number 0x{magic:08x}", 0)
        ndim = magic & 0xFF
        raw = fh.read(4 * ndim)
        if len(raw) < 4 * ndim:
            raise IdxFormatError("truncated dimension header", 4 + len(raw))
        return magic, struct.unpack(f">{ndim}I", raw)
