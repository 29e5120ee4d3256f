"""Synthetic datasets, epoch-wise minibatch sampling and equal-size sharding."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .numerics import Rng


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DataError("dataset needs at least one sample")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError("labels must have one entry per sample")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise DataError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, indices):
        idx = np.asarray(indices, dtype=np.intp)
        return self.features[idx], self.labels[idx]


@dataclass(frozen=True)
class Shard:
    indices: np.ndarray
    owner: int


def generate_synthetic(seed: int, n_samples: int, n_features: int, n_classes: int,
                       spread: float) -> Dataset:
    """Gaussian blobs around class centres placed on a sphere of radius ``spread``.

    Sample k carries label ``k % n_classes``, so class counts differ by at most one.
    """
    if n_classes < 2 or n_samples < n_classes:
        raise DataError("need n_samples >= n_classes >= 2")
    if n_features < 1:
        raise DataError("need n_features >= 1")
    if not spread > 0:
        raise DataError("spread must be > 0")
    rng = Rng(seed)
    centers = rng.normals(n_classes * n_features).reshape(n_classes, n_features)
    norms = np.linalg.norm(centers, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    centers = spread * centers / norms
    labels = np.arange(n_samples) % n_classes
    noise = rng.normals(n_samples * n_features).reshape(n_samples, n_features)
    return Dataset(centers[labels] + noise, labels.astype(np.int64), n_classes)


def fisher_yates(n: int, rng: Rng) -> np.ndarray:
    """Permutation of range(n): for i = n-1..1 swap i with rng.below(i + 1)."""
    perm = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


class MinibatchSampler:
    """Epoch-wise sampling without replacement.

    Each epoch draws a fresh Fisher-Yates permutation from the sampler's Rng and
    hands out consecutive slices of ``size`` indices. A tail shorter than
    ``size`` is dropped and the next epoch begins, so every minibatch has the
    same cardinality. With ``replacement=True`` every draw is ``size``
    independent uniform indices instead.
    """

    def __init__(self, n_samples: int, seed: int, replacement: bool = False):
        self.n_samples = n_samples
        self.rng = Rng(seed)
        self.replacement = replacement
        self.epoch = -1
        self._perm: Optional[np.ndarray] = None
        self._pos = 0

    def draw(self, size: int) -> np.ndarray:
        if size < 1 or size > self.n_samples:
            raise DataError(f"minibatch size {size} outside [1, {self.n_samples}]")
        if self.replacement:
            return (self.rng.u64_block(size) % np.uint64(self.n_samples)).astype(np.int64)
        if self._perm is None or self._pos + size > self.n_samples:
            self._perm = fisher_yates(self.n_samples, self.rng)
            self._pos = 0
            self.epoch += 1
        out = self._perm[self._pos:self._pos + size].copy()
        self._pos += size
        return out


def draw_minibatch(dataset: Dataset, sampler: MinibatchSampler, size: int) -> np.ndarray:
    if sampler.n_samples != len(dataset):
        raise DataError("sampler was built for a different dataset size")
    return sampler.draw(size)


def partition_minibatch(indices, n_workers: int) -> List[Shard]:
    """Contiguous equal slices; shard i owns positions [i*|M|/N, (i+1)*|M|/N)."""
    indices = np.asarray(indices)
    if n_workers < 1 or len(indices) % n_workers:
        raise DataError(
            f"minibatch of {len(indices)} samples cannot be split evenly over {n_workers} workers"
        )
    step = len(indices) // n_workers
    return [Shard(indices[i * step:(i + 1) * step], i) for i in range(n_workers)]


def load_csv(path) -> Dataset:
    """Rows ``f_1,...,f_d,label``; the class count is max label + 1."""
    feats, labels = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                values = [float(c) for c in row[:-1]]
                label = int(row[-1])
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            if not values:
                raise DataError(f"{path}: line {lineno}: row needs features and a label")
            if label < 0:
                raise DataError(f"{path}: line {lineno}: negative label {label}")
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise DataError(f"{path}: line {lineno}: expected {width} features, got {len(values)}")
            feats.append(values)
            labels.append(label)
    if not feats:
        raise DataError(f"{path}: no data rows")
    labels_arr = np.array(labels, dtype=np.int64)
    return Dataset(np.array(feats, dtype=np.float64), labels_arr, int(labels_arr.max()) + 1)


def save_csv(dataset: Dataset, path) -> None:
    # repr() of a Python float round-trips exactly.
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        for row, label in zip(dataset.features.tolist(), dataset.labels.tolist()):
            writer.writerow([repr(v) for v in row] + [label])
