"""MNIST (IDX) and CIFAR-10 (binary) readers, writers, normalization and augmentation."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# fixed normalization constants; the usual published values for each dataset
MNIST_MEAN = (0.1307,)
MNIST_STD = (0.3081,)
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class DataFormatError(ValueError):
    pass


class BadMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    def __init__(self, path, offset: int, expected: int):
        super().__init__(f"{path}: file truncated at byte offset {offset}, expected {expected} bytes")
        self.offset = offset
        self.expected = expected


class CountMismatchError(DataFormatError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (n, c, h, w) float32, normalized
    labels: np.ndarray  # (n,) int64
    split: str = "train"
    classes: int = 10

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatchError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise DataFormatError(f"labels outside [0, {self.classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int, offset: int = 0) -> "Dataset":
        sl = slice(offset, offset + n)
        return Dataset(self.images[sl], self.labels[sl], self.split, self.classes)


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Raw contents of an IDX file (uint8 data, big-endian header)."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise TruncatedFileError(path, len(raw), 4)
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    magic = struct.unpack(">I", raw[:4])[0]
    if zero != 0 or dtype_code != 0x08 or magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
        raise BadMagicError(f"{path}: bad IDX magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(path, len(raw), header)
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + int(np.prod(dims, dtype=np.int64))
    if len(raw) < expected:
        raise TruncatedFileError(path, len(raw), expected)
    return np.frombuffer(raw, dtype=np.uint8, count=expected - header, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    magic = {3: IDX_IMAGES_MAGIC, 1: IDX_LABELS_MAGIC}.get(array.ndim)
    if magic is None:
        raise ValueError(f"IDX writer supports 1-D labels or 3-D images, got {array.ndim}-D")
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def normalize(pixels: np.ndarray, mean, std) -> np.ndarray:
    """uint8 (n, c, h, w) -> float32 scaled to [0, 1] then standardized per channel."""
    x = pixels.astype(np.float32) / np.float32(255.0)
    m = np.asarray(mean, np.float32)[None, :, None, None]
    s = np.asarray(std, np.float32)[None, :, None, None]
    return (x - m) / s


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1:
        raise DataFormatError(f"expected 3-D images and 1-D labels, got {images.shape} and {labels.shape}")
    if len(images) != len(labels):
        raise CountMismatchError(f"{images_path} has {len(images)} images but {labels_path} has {len(labels)} labels")
    x = normalize(images[:, None], MNIST_MEAN, MNIST_STD)
    return Dataset(x, labels.astype(np.int64), split)


def _find(root: Path, name: str) -> Path:
    for cand in (root / name, root / (name + ".gz"), root / name.replace("-idx", ".idx")):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"{name} not found under {root}")


def load_mnist(root, split: str = "train") -> Dataset:
    root = Path(root)
    img, lab = MNIST_FILES[split]
    return load_idx(_find(root, img), _find(root, lab), split)


def read_cifar10(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw (uint8 images (n, 3, 32, 32), uint8 labels) from one CIFAR-10 binary batch file."""
    raw = Path(path).read_bytes()
    if len(raw) % CIFAR_RECORD:
        raise DataFormatError(f"{path}: size {len(raw)} is not a multiple of the {CIFAR_RECORD}-byte record")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    return rec[:, 1:].reshape(-1, 3, 32, 32), rec[:, 0].copy()


def write_cifar10(path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, np.uint8).reshape(len(images), -1)
    labels = np.asarray(labels, np.uint8)[:, None]
    Path(path).write_bytes(np.concatenate([labels, images], axis=1).tobytes())


def load_cifar10(path, split: str = "train") -> Dataset:
    """Load one batch file, or every batch of ``split`` from a cifar-10-batches-bin directory."""
    path = Path(path)
    if path.is_dir():
        names = ["test_batch.bin"] if split == "test" else [f"data_batch_{i}.bin" for i in range(1, 6)]
        files = [path / n for n in names if (path / n).exists()]
        if not files:
            raise FileNotFoundError(f"no CIFAR-10 {split} batches under {path}")
    else:
        files = [path]
    parts = [read_cifar10(f) for f in files]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts]).astype(np.int64)
    return Dataset(normalize(images, CIFAR10_MEAN, CIFAR10_STD), labels, split)


def load_dataset(name: str, root, split: str) -> Dataset:
    if name == "mnist":
        return load_mnist(root, split)
    if name in ("cifar10", "cifar-10"):
        return load_cifar10(root, split)
    raise ValueError(f"unknown dataset {name!r}")


def hflip(images: np.ndarray) -> np.ndarray:
    return images[..., ::-1].copy()


def augment(images: np.ndarray, rng: np.random.Generator, pad: int = 4, crop: int | None = None,
            flip_p: float = 0.5) -> np.ndarray:
    """Random crop from a zero-padded copy plus random horizontal flip.

    Labels are untouched by construction; the output has the input's shape
    when ``crop`` equals the image size (the default).
    """
    n, c, h, w = images.shape
    crop = crop or h
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oy = rng.integers(0, h + 2 * pad - crop + 1, size=n)
    ox = rng.integers(0, w + 2 * pad - crop + 1, size=n)
    flips = rng.random(n) < flip_p
    out = np.empty((n, c, crop, crop), dtype=images.dtype)
    for k in range(n):
        patch = padded[k, :, oy[k]:oy[k] + crop, ox[k]:ox[k] + crop]
        out[k] = patch[..., ::-1] if flips[k] else patch
    return out


def default_mnist_root() -> str | None:
    for cand in (os.environ.get("PCNN_MNIST"), "data/mnist", "/root/data/mnist"):
        if cand and Path(cand).is_dir():
            return cand
    return None
