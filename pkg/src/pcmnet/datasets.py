"""Dataset ingestion: IDX containers and a deterministic synthetic digit task."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetError(ValueError):
    """Raised for malformed dataset files or inconsistent image/label pairs."""


@dataclass
class Dataset:
    """Labeled image set: images (n, h, w) float64 in [0, 1], labels (n,) ints."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3:
            raise DatasetError(f"images must be (n, h, w), got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DatasetError(
                f"image/label count mismatch: {len(self.images)} vs {len(self.labels)}"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DatasetError("pixel values must lie in [0, 1]")

    def __len__(self):
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx])


def _read_idx_header(raw: bytes, path: str):
    if len(raw) < 4:
        raise DatasetError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    ndim = magic & 0xFF
    if len(raw) < 4 + 4 * ndim:
        raise DatasetError(f"{path}: truncated IDX dimension list")
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    return magic, dims, raw[4 + 4 * ndim :]


def load_idx(images_path, labels_path) -> Dataset:
    """Parse a big-endian IDX image/label file pair into a Dataset.

    Pixels are scaled from [0, 255] bytes to [0, 1] floats.
    """
    with open(images_path, "rb") as f:
        raw = f.read()
    magic, dims, body = _read_idx_header(raw, str(images_path))
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetError(
            f"{images_path}: wrong magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )
    n, h, w = dims
    if len(body) < n * h * w:
        raise DatasetError(f"{images_path}: truncated pixel data ({len(body)} < {n * h * w})")
    images = np.frombuffer(body[: n * h * w], dtype=np.uint8).reshape(n, h, w) / 255.0

    with open(labels_path, "rb") as f:
        raw = f.read()
    magic, dims, body = _read_idx_header(raw, str(labels_path))
    if magic != IDX_LABELS_MAGIC:
        raise DatasetError(
            f"{labels_path}: wrong magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )
    (n_labels,) = dims
    if len(body) < n_labels:
        raise DatasetError(f"{labels_path}: truncated label data")
    labels = np.frombuffer(body[:n_labels], dtype=np.uint8).astype(np.int64)
    if n_labels != n:
        raise DatasetError(f"image/label count mismatch: {n} images vs {n_labels} labels")
    return Dataset(images, labels)


# Seven-segment layout on a 5x3 glyph: (a top, b upper-right, c lower-right,
# d bottom, e lower-left, f upper-left, g middle).
_DIGIT_SEGMENTS = {
    0: "abcdef",
    1: "bc",
    2: "abged",
    3: "abgcd",
    4: "fgbc",
    5: "afgcd",
    6: "afgedc",
    7: "abc",
    8: "abcdefg",
    9: "abcdfg",
}


def _glyph(digit: int) -> np.ndarray:
    g = np.zeros((5, 3))
    segs = _DIGIT_SEGMENTS[digit]
    if "a" in segs:
        g[0, :] = 1
    if "g" in segs:
        g[2, :] = 1
    if "d" in segs:
        g[4, :] = 1
    if "f" in segs:
        g[0:3, 0] = 1
    if "b" in segs:
        g[0:3, 2] = 1
    if "e" in segs:
        g[2:5, 0] = 1
    if "c" in segs:
        g[2:5, 2] = 1
    return g


def synthetic_digits(seed: int, n: int) -> Dataset:
    """Deterministic 8x8 ten-class digit task (seven-segment glyphs + jitter).

    Labels cycle 0..9, so n == 10 yields one sample per class. The same seed
    always produces an identical dataset.
    """
    if n <= 0:
        raise DatasetError("n must be positive")
    rng = np.random.default_rng(seed)
    images = np.zeros((n, 8, 8))
    labels = np.arange(n) % 10
    glyphs = [_glyph(d) for d in range(10)]
    for i in range(n):
        dy = rng.integers(1, 3)  # one pixel of translation jitter
        dx = rng.integers(2, 4)
        img = np.zeros((8, 8))
        img[dy : dy + 5, dx : dx + 3] = glyphs[labels[i]] * rng.uniform(0.8, 1.0)
        img += rng.normal(0.0, 0.12, size=(8, 8))
        images[i] = np.clip(img, 0.0, 1.0)
    return Dataset(images, labels)
