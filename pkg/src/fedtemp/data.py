"""Datasets: MNIST IDX ingestion, synthetic Gaussian blobs, Dirichlet client splits."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, DomainError, FormatError
from .rng import stream

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        X = np.asarray(self.features)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise ConfigurationError("features must be an n x d matrix")
        if X.shape[0] == 0:
            raise DomainError("dataset is empty")
        if y.shape != (X.shape[0],):
            raise ConfigurationError("one label per feature row is required")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise DomainError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], self.n_classes)


@dataclass(frozen=True, eq=False)
class Partition:
    assignments: tuple
    alpha: float

    @property
    def n_clients(self) -> int:
        return len(self.assignments)

    def counts(self) -> np.ndarray:
        return np.array([len(a) for a in self.assignments], dtype=np.int64)


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def read_idx_images(path) -> np.ndarray:
    raw = _read(path)
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise FormatError(f"{path}: bad image magic {magic:#010x}")
    if len(raw) != 16 + n * rows * cols:
        raise FormatError(f"{path}: expected {n * rows * cols} pixel bytes, found {len(raw) - 16}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    raw = _read(path)
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise FormatError(f"{path}: bad label magic {magic:#010x}")
    if len(raw) != 8 + n:
        raise FormatError(f"{path}: expected {n} label bytes, found {len(raw) - 8}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8)


def load_idx(images_path, labels_path, n_classes=10) -> Dataset:
    """Big-endian IDX image/label pair; pixels scaled to [0, 1]."""
    pixels = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if pixels.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{pixels.shape[0]} images but {labels.shape[0]} labels"
        )
    if labels.size and labels.max() >= n_classes:
        raise FormatError(f"label {labels.max()} exceeds class count {n_classes}")
    return Dataset(pixels.astype(np.float32) / np.float32(255.0), labels.astype(np.int64), n_classes)


def write_idx_images(path, pixels: np.ndarray, rows: int, cols: int) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(-1, rows * cols)
    header = struct.pack(">IIII", IMAGE_MAGIC, pixels.shape[0], rows, cols)
    Path(path).write_bytes(header + pixels.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", LABEL_MAGIC, labels.size) + labels.tobytes())


def blob_centers(n_classes: int, d: int, radius: float = 3.0) -> np.ndarray:
    """Class ``c`` sits at ``radius * (1 + c // d)`` along axis ``c % d``."""
    centers = np.zeros((n_classes, d))
    for c in range(n_classes):
        centers[c, c % d] = radius * (1 + c // d)
    return centers


def synth_blobs(n_classes: int, per_class: int, d: int, spread: float, seed: int) -> Dataset:
    if n_classes < 1 or per_class < 1 or d < 1:
        raise DomainError("class count, per-class count and dimension must be positive")
    if spread < 0:
        raise DomainError("spread must be non-negative")
    centers = blob_centers(n_classes, d)
    noise = stream(seed, "synth").normal(n_classes * per_class * d).reshape(-1, d)
    labels = np.repeat(np.arange(n_classes), per_class)
    return Dataset(centers[labels] + spread * noise, labels, n_classes)


def largest_remainder(proportions, total: int) -> np.ndarray:
    """Integer counts summing to ``total``; ties in the remainder go to the lower index."""
    raw = np.asarray(proportions, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.lexsort((np.arange(raw.size), -(raw - counts)))
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(data: Dataset, n_clients: int, alpha: float, seed: int) -> Partition:
    """Per-class Dirichlet(alpha) split across clients.

    Classes are processed in ascending order; for each, its indices are
    shuffled, a proportion vector drawn, counts fixed by largest remainder and
    contiguous chunks handed out by client id.  Empty clients are then
    repaired by taking one sample from the current largest client.
    """
    if n_clients < 1:
        raise ConfigurationError("need at least one client")
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    if len(data) < n_clients:
        raise ConfigurationError(f"{len(data)} samples cannot fill {n_clients} clients")
    rs = stream(seed, "partition")
    buckets = [[] for _ in range(n_clients)]
    for c in range(data.n_classes):
        idx = np.flatnonzero(data.labels == c)
        if idx.size == 0:
            continue
        idx = idx[rs.permutation(idx.size)]
        counts = largest_remainder(rs.dirichlet(alpha, n_clients), idx.size)
        for k, chunk in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
            buckets[k].extend(chunk.tolist())
    for k in range(n_clients):
        if not buckets[k]:
            donor = max(range(n_clients), key=lambda j: (len(buckets[j]), -j))
            buckets[k].append(buckets[donor].pop())
    return Partition(tuple(np.array(sorted(b), dtype=np.int64) for b in buckets), float(alpha))


def label_histograms(data: Dataset, partition: Partition) -> np.ndarray:
    """``(K, C)`` per-client class counts."""
    return np.stack([
        np.bincount(data.labels[a], minlength=data.n_classes) for a in partition.assignments
    ])
