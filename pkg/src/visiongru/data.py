"""CIFAR-10 binary format: records of 1 label byte + 3072 image bytes
(3 planes of 32x32, row-major).  Also a writer and a synthetic generator
that emits the same layout, for tests and offline desk runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from visiongru import tensor as T

RECORD = 1 + 3 * 32 * 32
NUM_CLASSES = 10
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"
LAYOUT_HELP = (
    "expected CIFAR-10 binary files: a directory with data_batch_1.bin .. data_batch_5.bin "
    "(training) and optionally test_batch.bin (validation), each a sequence of 3073-byte "
    "records (1 label byte + 3x32x32 channel-planar pixels); or a single such .bin file"
)


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (N, 32, 32, 3) uint8, channels-last
    labels: np.ndarray  # (N,) int64
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], self.mean, self.std)

    def normalized(self, resolution: int | None = None, dtype=None) -> np.ndarray:
        """Float images (N, R, R, 3) after per-channel standardization and resize."""
        if self.mean is None:
            raise DataError("dataset has no normalization constants; ingest the training split first")
        x = (self.images.astype(np.float64) - self.mean) / self.std
        x = x.astype(dtype or T.get_dtype())
        if resolution and resolution != x.shape[1]:
            x = T.resize_bilinear(x, resolution, resolution)
        return x


def read_records(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Raw (images uint8 (N,32,32,3), labels) from one binary file."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % RECORD:
        offset = (raw.size // RECORD) * RECORD
        raise DataError(f"{path}: truncated record at byte offset {offset} ({raw.size - offset} of {RECORD} bytes)")
    recs = raw.reshape(-1, RECORD)
    labels = recs[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= NUM_CLASSES)
    if bad.size:
        i = int(bad[0])
        raise DataError(f"{path}: label {labels[i]} >= {NUM_CLASSES} in record {i} (byte offset {i * RECORD})")
    images = recs[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(images), labels


def write_records(path: str | Path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    planes = images.transpose(0, 3, 1, 2).reshape(len(images), -1)
    recs = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], planes], axis=1)
    Path(path).write_bytes(recs.tobytes())


def channel_stats(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = images.astype(np.float64).reshape(-1, images.shape[-1])
    std = x.std(axis=0)
    return x.mean(axis=0), np.where(std > 0, std, 1.0)


def ingest_cifar10(path: str | Path, stats: tuple[np.ndarray, np.ndarray] | None = None) -> Dataset:
    """Load one file or a set of training batches.

    Normalization constants come from ``stats`` if given, otherwise from the
    loaded images themselves (pass the training split's stats for validation).
    """
    path = Path(path)
    if path.is_dir():
        files = [path / f for f in TRAIN_FILES if (path / f).exists()]
        if not files:
            raise DataError(f"no training batches found in {path}; {LAYOUT_HELP}")
    elif path.exists():
        files = [path]
    else:
        raise DataError(f"dataset not found at {path}; {LAYOUT_HELP}")
    parts = [read_records(f) for f in files]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    mean, std = stats if stats is not None else channel_stats(images)
    return Dataset(images, labels, mean, std)


def load_splits(path: str | Path, n_train: int | None = None, n_val: int | None = None):
    """(train, val-or-None) with val normalized by the training statistics."""
    path = Path(path)
    train = ingest_cifar10(path)
    if n_train:
        train = train.subset(n_train)
        train.mean, train.std = channel_stats(train.images)
    val = None
    test = path / TEST_FILE if path.is_dir() else None
    if test is not None and test.exists():
        val = ingest_cifar10(test, (train.mean, train.std))
        if n_val:
            val = val.subset(n_val)
    return train, val


def synthesize(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Class-structured, heavily corrupted images.

    Each class owns a random low-frequency colour template.  A sample blends
    its class template with a random distractor template, is randomly
    shifted and contrast-jittered, then drowned in pixel noise, so classes
    overlap and memorizing a training subset takes real fitting.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC1FA]))
    templates = T.resize_bilinear(rng.uniform(-1, 1, (NUM_CLASSES, 4, 4, 3)), 32, 32)
    labels = rng.integers(0, NUM_CLASSES, n)
    images = np.empty((n, 32, 32, 3))
    for i in range(n):
        mix = rng.uniform(0.35, 0.65)
        other = T.resize_bilinear(rng.uniform(-1, 1, (4, 4, 3)), 32, 32)
        img = mix * templates[labels[i]] + (1 - mix) * other
        img = np.roll(img, tuple(rng.integers(-8, 9, 2)), axis=(0, 1))
        images[i] = 128 + rng.uniform(40, 90) * img
    images += rng.normal(0, 40, images.shape)
    return np.clip(np.rint(images), 0, 255).astype(np.uint8), labels


def write_synthetic(directory: str | Path, n_train: int = 5000, n_test: int = 1000, seed: int = 0) -> Path:
    """Write a CIFAR-10-layout dataset directory (one training batch + test batch)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    images, labels = synthesize(n_train + n_test, seed)
    write_records(d / TRAIN_FILES[0], images[:n_train], labels[:n_train])
    write_records(d / TEST_FILE, images[n_train:], labels[n_train:])
    return d
