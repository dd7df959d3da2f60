"""Synthetic image classification data and its binary container format.

Each class is a fixed oriented stripe template (class-specific frequency and
angle) plus Gaussian pixel noise, clipped to [0,1]. Generation is a pure
function of the parameters and seed; splits are class-balanced within one
example.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"MHNES1\0"
_HEADER = struct.Struct("<6I")  # C, H, W, n_train, n_val, n_test


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetBundle:
    train_x: np.ndarray  # [N,1,H,W] in [0,1]
    train_y: np.ndarray  # [N] in {0..C-1}
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    classes: int
    provenance: str

    def split(self, name):
        return {
            "train": (self.train_x, self.train_y),
            "val": (self.val_x, self.val_y),
            "test": (self.test_x, self.test_y),
        }[name]

    @property
    def image_size(self):
        return self.train_x.shape[2]


def class_templates(classes, size):
    """Oriented stripe pattern per class; frequency and angle vary together."""
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    templates = np.empty((classes, size, size))
    for c in range(classes):
        angle = np.pi * c / classes
        freq = 1.5 + 0.9 * c
        phase = 2 * np.pi * freq * (xx * np.cos(angle) + yy * np.sin(angle)) / size
        templates[c] = 0.5 + 0.25 * np.sin(phase)
    return templates


def _balanced_labels(n, classes, rng):
    labels = np.arange(n, dtype=np.int64) % classes
    rng.shuffle(labels)
    return labels


def gen_synthetic(
    classes=4,
    n_train=2000,
    n_val=500,
    n_test=500,
    image_size=16,
    noise_std=0.15,
    seed=0,
):
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if image_size < 8:
        raise ValueError(f"image size must be >= 8, got {image_size}")
    rng = np.random.default_rng([seed, 0x5EED])
    templates = class_templates(classes, image_size)

    def make_split(n):
        labels = _balanced_labels(n, classes, rng)
        images = templates[labels][:, None, :, :].copy()
        images += rng.normal(0.0, noise_std, images.shape)
        return np.clip(images, 0.0, 1.0), labels

    train_x, train_y = make_split(n_train)
    val_x, val_y = make_split(n_val)
    test_x, test_y = make_split(n_test)
    return DatasetBundle(
        train_x, train_y, val_x, val_y, test_x, test_y, classes, f"seed={seed}"
    )


def save_bundle(bundle: DatasetBundle, path):
    h = bundle.train_x.shape[2]
    w = bundle.train_x.shape[3]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(
            _HEADER.pack(
                bundle.classes,
                h,
                w,
                len(bundle.train_y),
                len(bundle.val_y),
                len(bundle.test_y),
            )
        )
        for x, _ in (bundle.split(s) for s in ("train", "val", "test")):
            f.write(np.ascontiguousarray(x, dtype="<f8").tobytes())
        for _, y in (bundle.split(s) for s in ("train", "val", "test")):
            f.write(np.ascontiguousarray(y, dtype="<u2").tobytes())


def load_raw(path) -> DatasetBundle:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise DataFormatError(
            f"{path}: bad magic {blob[: len(MAGIC)]!r}, expected {MAGIC!r}"
        )
    off = len(MAGIC)
    if len(blob) < off + _HEADER.size:
        raise DataFormatError(f"{path}: truncated header at byte {len(blob)}")
    classes, h, w, n_train, n_val, n_test = _HEADER.unpack_from(blob, off)
    off += _HEADER.size
    counts = (n_train, n_val, n_test)
    expected = off + sum(counts) * h * w * 8 + sum(counts) * 2
    if len(blob) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} bytes, found {len(blob)}"
        )
    images = []
    for n in counts:
        size = n * h * w * 8
        arr = np.frombuffer(blob, dtype="<f8", count=n * h * w, offset=off)
        images.append(arr.reshape(n, 1, h, w).copy())
        off += size
    labels = []
    for si, n in enumerate(counts):
        arr = np.frombuffer(blob, dtype="<u2", count=n, offset=off).astype(np.int64)
        bad = np.nonzero(arr >= classes)[0]
        if bad.size:
            raise DataFormatError(
                f"{path}: label {arr[bad[0]]} >= {classes} classes at record "
                f"{bad[0]} of split {('train', 'val', 'test')[si]}"
            )
        labels.append(arr)
        off += n * 2
    return DatasetBundle(
        images[0],
        labels[0],
        images[1],
        labels[1],
        images[2],
        labels[2],
        classes,
        f"file={path}",
    )


def nearest_template_accuracy(bundle: DatasetBundle, split="test"):
    """Accuracy of matching each image to the closest class template."""
    x, y = bundle.split(split)
    templates = class_templates(bundle.classes, bundle.image_size)
    flat = x[:, 0].reshape(len(y), -1)
    tflat = templates.reshape(bundle.classes, -1)
    d2 = ((flat[:, None, :] - tflat[None]) ** 2).sum(axis=2)
    return float((d2.argmin(axis=1) == y).mean())
