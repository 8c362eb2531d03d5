"""Synthetic 2-D datasets and an IDX (MNIST-style) reader/writer."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "IdxFormatError",
    "LabeledDataset",
    "load_idx",
    "long_tail_counts",
    "make_blobs",
    "make_spirals",
    "write_idx",
]

SYNTHETIC_BOX = (-10.0, 10.0)
IMAGE_BOX = (0.0, 1.0)

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    box: tuple = SYNTHETIC_BOX

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError(f"inputs {x.shape} and labels {y.shape} do not line up")
        if x.shape[0] < 1:
            raise ValueError("dataset is empty")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, idx):
        return LabeledDataset(self.inputs[idx], self.labels[idx], self.num_classes, self.box)


def long_tail_counts(n_max, num_classes, rho=0.05):
    """Exponential profile ``n_max * rho ** (y / (C - 1))``, rounded, at least one each."""
    y = np.arange(num_classes)
    return np.maximum(1, np.round(n_max * rho ** (y / (num_classes - 1)))).astype(np.int64)


def make_blobs(rng, num_classes, counts, radius=1.0, sigma=0.3):
    """Gaussian blobs around means equally spaced on a circle.

    Class ``y`` is centred at ``radius * (cos(2 pi y / C), sin(2 pi y / C))``.
    ``counts`` is an int (same for every class) or one count per class.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    counts = np.broadcast_to(np.asarray(counts, dtype=np.int64), (num_classes,))
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    if counts.sum() == 0:
        raise ValueError("all class counts are zero")
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    labels = np.repeat(np.arange(num_classes), counts)
    noise = rng.normal(size=(labels.size, 2)) if sigma > 0 else np.zeros((labels.size, 2))
    inputs = means[labels] + sigma * noise
    return LabeledDataset(inputs, labels, num_classes, SYNTHETIC_BOX)


def make_spirals(rng, n, noise=0.0, turns=1.5):
    """Two interleaved Archimedean spirals.

    Arm 0 is ``t * (cos 2 pi k t, sin 2 pi k t)`` for ``t`` evenly spaced in
    ``(0, 1]`` with ``k = turns``; arm 1 is arm 0 rotated by pi.  Gaussian
    noise of scale ``noise`` is added to every coordinate.
    """
    if n < 1:
        raise ValueError("need at least one point per arm")
    t = np.arange(1, n + 1) / n
    theta = 2.0 * np.pi * turns * t
    arm = np.stack([t * np.cos(theta), t * np.sin(theta)], axis=1)
    inputs = np.concatenate([arm, -arm])
    if noise > 0:
        inputs = inputs + noise * rng.normal(size=inputs.shape)
    labels = np.repeat([0, 1], n)
    return LabeledDataset(inputs, labels, 2, SYNTHETIC_BOX)


def _read_header(buf, path, expected_magic, ndim):
    if len(buf) < 4 + 4 * ndim:
        raise IdxFormatError(f"{path}: truncated header")
    magic = struct.unpack(">I", buf[:4])[0]
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    dims = struct.unpack(f">{ndim}I", buf[4:4 + 4 * ndim])
    payload = buf[4 + 4 * ndim:]
    need = int(np.prod(dims))
    if len(payload) < need:
        raise IdxFormatError(f"{path}: truncated payload, {len(payload)} of {need} bytes")
    return dims, np.frombuffer(payload[:need], dtype=np.uint8)


def load_idx(images_path, labels_path, num_classes=None):
    """Read an IDX image/label file pair into a dataset with pixels in [0, 1]."""
    with open(images_path, "rb") as f:
        (n, h, w), pixels = _read_header(f.read(), images_path, IDX_IMAGES, 3)
    with open(labels_path, "rb") as f:
        (m,), labels = _read_header(f.read(), labels_path, IDX_LABELS, 1)
    if n != m:
        raise IdxFormatError(f"image/label count mismatch: {n} images, {m} labels")
    inputs = pixels.reshape(n, h * w).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = max(2, int(labels.max()) + 1)
    return LabeledDataset(inputs, labels, num_classes, IMAGE_BOX)


def write_idx(images_path, labels_path, images, labels):
    """Write ``uint8`` images ``(N, H, W)`` and labels ``(N,)`` in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS, labels.shape[0]))
        f.write(labels.tobytes())
