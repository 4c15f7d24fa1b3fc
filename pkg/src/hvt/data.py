"""Datasets: IDX files, a synthetic class hierarchy, and training augmentation."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, FormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
_UBYTE = 0x08

SPLIT_FILES = {
    "train": ("train-images.idx3", "train-labels.idx1"),
    "test": ("test-images.idx3", "test-labels.idx1"),
}


@dataclass
class Dataset:
    images: np.ndarray  # B x C x H x W in [0, 1]
    labels: np.ndarray  # B, int64

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be B x C x H x W, got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx])


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

_ALLOWED = {IMAGES_MAGIC: (IMAGES_MAGIC, 0x00000804), LABELS_MAGIC: (LABELS_MAGIC,)}


def _read_idx(path: str, expect_magic: int) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in _ALLOWED[expect_magic]:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header != count:
        raise FormatError(f"{path}: expected {count} payload bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1] by 1/255."""
    imgs = _read_idx(images_path, IMAGES_MAGIC)
    labels = _read_idx(labels_path, LABELS_MAGIC)
    if imgs.shape[0] != labels.shape[0]:
        raise DataError(f"{imgs.shape[0]} images but {labels.shape[0]} labels")
    if imgs.ndim == 3:
        imgs = imgs[:, None]
    return Dataset(imgs.astype(np.float64) / 255.0, labels.astype(np.int64))


def _write_idx(path: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    magic = (_UBYTE << 8) | arr.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def to_bytes(images: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(images) * 255.0), 0, 255).astype(np.uint8)


def write_idx(images_path: str, labels_path: str, ds: Dataset) -> None:
    """Inverse of :func:`load_idx`; single-channel sets are written as 3-D IDX."""
    imgs = to_bytes(ds.images)
    if imgs.shape[1] == 1:
        imgs = imgs[:, 0]
    if len(ds) and (ds.labels.min() < 0 or ds.labels.max() > 255):
        raise DataError("IDX labels are stored as unsigned bytes")
    _write_idx(images_path, imgs)
    _write_idx(labels_path, ds.labels.astype(np.uint8))


def load_split(data_dir: str, split: str = "train") -> Dataset:
    img, lab = SPLIT_FILES[split]
    ip, lp = os.path.join(data_dir, img), os.path.join(data_dir, lab)
    if not (os.path.exists(ip) and os.path.exists(lp)):
        raise DataError(f"missing {img} / {lab} in {data_dir}")
    return load_idx(ip, lp)


def write_split(data_dir: str, split: str, ds: Dataset) -> None:
    os.makedirs(data_dir, exist_ok=True)
    img, lab = SPLIT_FILES[split]
    write_idx(os.path.join(data_dir, img), os.path.join(data_dir, lab), ds)


# ---------------------------------------------------------------------------
# synthetic hierarchy
# ---------------------------------------------------------------------------

LEVEL_AMPLITUDE = 0.25
LEVEL_DECAY = 0.6


def _node_template(level: int, prefix: int, image_size: int, rng_seed: int) -> np.ndarray:
    """Sign pattern on a 2^level x 2^level grid of blocks for one tree node."""
    grid = 2 ** level
    rng = np.random.default_rng([rng_seed, level, prefix])
    signs = rng.choice([-1.0, 1.0], size=(grid, grid))
    reps = int(np.ceil(image_size / grid))
    return np.kron(signs, np.ones((reps, reps)))[:image_size, :image_size]


def class_templates(num_classes: int, image_size: int = 16, seed: int = 0) -> np.ndarray:
    """Noise-free mean image per class (K x H x W)."""
    depth = _depth(num_classes)
    out = np.full((num_classes, image_size, image_size), 0.5)
    for k in range(num_classes):
        for level in range(1, depth + 1):
            prefix = k >> (depth - level)  # path bits down to this level
            amp = LEVEL_AMPLITUDE * LEVEL_DECAY ** (level - 1)
            out[k] += amp * _node_template(level, prefix, image_size, seed)
    return out


def _depth(num_classes: int) -> int:
    if num_classes < 2 or num_classes & (num_classes - 1):
        raise ConfigError(f"num_classes must be a power of two >= 2, got {num_classes}")
    return num_classes.bit_length() - 1


def synth_hierarchy(num_classes: int, samples_per_class: int, image_size: int = 16,
                    depth: int | None = None, seed: int = 0, split: str = "train",
                    noise: float = 0.1) -> Dataset:
    """Leaves of a binary tree as classes; each level adds a shared block pattern.

    Classes sharing a longer path prefix share more of their mean image, so
    siblings are closer in pixel space than cousins. Templates depend only on
    ``seed``; ``split`` salts the noise so train/test draw fresh samples of
    the same classes.
    """
    d = _depth(num_classes)
    if depth is not None and depth != d:
        raise ConfigError(f"depth {depth} gives {2 ** depth} classes, not {num_classes}")
    if samples_per_class < 0:
        raise ConfigError("samples_per_class must be non-negative")
    means = class_templates(num_classes, image_size, seed)
    salt = {"train": 1, "test": 2}.get(split, 3)
    rng = np.random.default_rng([seed, salt])
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    imgs = means[labels] + rng.normal(0.0, noise, size=(len(labels), image_size, image_size))
    order = rng.permutation(len(labels))
    return Dataset(np.clip(imgs, 0.0, 1.0)[order, None], labels[order])


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def hflip(image: np.ndarray) -> np.ndarray:
    return image[..., ::-1].copy()


def jitter(image: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(image * factor, 0.0, 1.0)


def random_crop(image: np.ndarray, rng: np.random.Generator, pad: int = 2) -> np.ndarray:
    C, H, W = image.shape
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)))
    dy, dx = rng.integers(0, 2 * pad + 1, size=2)
    return padded[:, dy:dy + H, dx:dx + W]


def augment(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Zero-padded random crop, horizontal flip (p=0.5), brightness x U(0.9, 1.1)."""
    out = random_crop(np.asarray(image, dtype=np.float64), rng)
    if rng.random() < 0.5:
        out = hflip(out)
    return jitter(out, rng.uniform(0.9, 1.1))


def augment_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return np.stack([augment(img, rng) for img in images])
