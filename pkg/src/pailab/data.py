"""Datasets: MNIST IDX reader/writer, synthetic blobs, class-balanced batches."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CountMismatchError, TruncatedFileError, WrongMagicError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "PAILAB_DATA_DIR"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    name: str
    classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ConfigError("features must be a non-empty (n, d) matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ConfigError("labels must have one entry per example")
        if self.labels.min() < 0 or self.labels.max() >= self.classes:
            raise ConfigError(f"labels outside [0, {self.classes})")

    def __len__(self):
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx, name=None) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.features[idx], self.labels[idx], name or self.name, self.classes)

    def head(self, n: int) -> "LabeledDataset":
        if n <= 0 or n >= len(self):
            return self
        return self.subset(np.arange(n), f"{self.name}[:{n}]")


# ---------------------------------------------------------------- IDX


def _read_header(buf: bytes, path, magic: int, ndims: int):
    need = 4 + 4 * ndims
    if len(buf) < need:
        raise TruncatedFileError(
            f"{path}: header truncated at byte offset {len(buf)} (need {need} bytes)", need, len(buf)
        )
    found = struct.unpack_from(">I", buf, 0)[0]
    if found != magic:
        raise WrongMagicError(
            f"{path}: wrong magic 0x{found:08x} at byte offset 0 (expected 0x{magic:08x})"
        )
    return struct.unpack_from(">" + "I" * ndims, buf, 4), need


def read_idx_images(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (n, rows, cols), off = _read_header(buf, path, IMAGES_MAGIC, 3)
    expected = off + n * rows * cols
    if len(buf) < expected:
        raise TruncatedFileError(
            f"{path}: pixel data truncated at byte offset {len(buf)} (expected {expected} bytes)",
            expected, len(buf),
        )
    return np.frombuffer(buf, dtype=np.uint8, count=n * rows * cols, offset=off).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (n,), off = _read_header(buf, path, LABELS_MAGIC, 1)
    if len(buf) < off + n:
        raise TruncatedFileError(
            f"{path}: label data truncated at byte offset {len(buf)} (expected {off + n} bytes)",
            off + n, len(buf),
        )
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=off)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, labels.size))
        f.write(labels.tobytes())


def load_mnist(images_path, labels_path, name: str = "mnist") -> LabeledDataset:
    """Parse an IDX image/label pair; pixels scaled to [0, 1] as float32."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} holds "
            f"{labels.shape[0]} labels (count field at byte offset 4)"
        )
    if images.shape[1:] != (28, 28):
        raise CountMismatchError(f"{images_path}: expected 28x28 images, got {images.shape[1:]}")
    features = images.reshape(len(images), -1).astype(np.float32) / np.float32(255.0)
    return LabeledDataset(features, labels.astype(np.int64), name, 10)


def data_dir(explicit=None) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return Path(env)
    return Path("data") / "mnist"


def load_mnist_split(split: str = "train", directory=None) -> LabeledDataset:
    if split not in MNIST_FILES:
        raise ConfigError(f"unknown MNIST split {split!r}")
    d = data_dir(directory)
    img, lab = MNIST_FILES[split]
    return load_mnist(d / img, d / lab, name=f"mnist-{split}")


# ---------------------------------------------------------------- synthetic


def synth_blobs(classes: int, per_class: int, d: int, separation: float, seed: int,
                name: str = "blobs") -> LabeledDataset:
    """Unit-variance Gaussian clusters.

    With ``classes <= d`` the centres sit on randomly rotated orthogonal axes
    at distance ``separation`` from the origin (pairwise ``separation·√2``).
    Otherwise they are sampled at least ``separation`` apart. Features are
    affinely rescaled (one shared scale) into [0, 1].
    """
    if classes < 2 or per_class < 1 or d < 1 or separation <= 0:
        raise ConfigError("synth_blobs needs classes >= 2 and positive sizes/separation")
    rng = np.random.default_rng(seed)
    if classes <= d:
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        centers = q[:classes] * separation
    else:
        centers = _spread_centers(rng, classes, d, separation)
    x = np.concatenate([c + rng.normal(size=(per_class, d)) for c in centers])
    y = np.repeat(np.arange(classes), per_class)
    perm = rng.permutation(len(y))
    x, y = x[perm], y[perm]
    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo)
    return LabeledDataset(x.astype(np.float32), y.astype(np.int64), name, classes)


def _spread_centers(rng, classes, d, separation):
    scale = separation * classes
    for _ in range(1000):
        c = rng.uniform(-scale, scale, size=(classes, d))
        dist = np.linalg.norm(c[:, None] - c[None], axis=-1)
        if dist[np.triu_indices(classes, 1)].min() >= separation:
            return c
    raise ConfigError("could not place blob centres; raise d or lower separation")


# ---------------------------------------------------------------- batches


def balanced_batch(dataset: LabeledDataset, size: int, seed: int):
    """Class-balanced sample without replacement: per-class counts differ by <= 1.

    The first ``size % classes`` classes receive the extra example.
    """
    c = dataset.classes
    if size < c:
        raise ConfigError(f"batch size {size} smaller than class count {c}")
    rng = np.random.default_rng(seed)
    base, extra = divmod(size, c)
    picks = []
    for cls in range(c):
        pool = np.flatnonzero(dataset.labels == cls)
        want = base + (1 if cls < extra else 0)
        if pool.size == 0:
            raise ConfigError(f"class {cls} absent from {dataset.name}")
        if pool.size < want:
            raise ConfigError(f"class {cls} has {pool.size} examples, {want} requested")
        picks.append(rng.choice(pool, size=want, replace=False))
    idx = np.sort(np.concatenate(picks))
    return dataset.features[idx], dataset.labels[idx]
