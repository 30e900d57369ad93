"""IDX (MNIST / Fashion-MNIST) parsing and a synthetic Gaussian-blob generator."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, IdxParseError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

FASHION_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
FASHION_SIZES = {"train": 60000, "test": 10000}


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.n_classes)


def _read_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw: bytes, expect_magic=None):
    """Decode an unsigned-byte IDX buffer into an integer array.

    ``expect_magic`` rejects files of the wrong kind (e.g. images passed as labels).
    """
    if len(raw) < 4:
        raise IdxParseError(f"truncated header at byte 0: need 4 bytes, have {len(raw)}")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    magic = struct.unpack(">I", raw[:4])[0]
    if zero != 0 or dtype_code != 0x08:
        raise IdxParseError(f"bad magic 0x{magic:08x} at byte 0: only unsigned-byte IDX is supported")
    if expect_magic is not None and magic != expect_magic:
        raise IdxParseError(f"bad magic 0x{magic:08x} at byte 0, expected 0x{expect_magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxParseError(f"truncated dimension table at byte 4: need {header} bytes, have {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims)) if dims else 1
    if len(raw) < header + count:
        raise IdxParseError(
            f"truncated data at byte {len(raw)}: dims {dims} need {header + count} bytes")
    if len(raw) > header + count:
        raise IdxParseError(f"trailing bytes after offset {header + count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header, count=count).reshape(dims)


def load_idx(path, kind="images", expect_count=None, expect_shape=None):
    """Load an IDX file.

    ``kind="images"`` returns float64 features in ``[0, 1]`` flattened to
    ``(n, rows*cols)``; ``kind="labels"`` returns int64 labels.
    """
    magic = {"images": IMAGE_MAGIC, "labels": LABEL_MAGIC}[kind]
    arr = parse_idx(_read_bytes(path), expect_magic=magic)
    if expect_count is not None and arr.shape[0] != expect_count:
        raise IdxParseError(f"dimension mismatch at byte 4: {arr.shape[0]} items, expected {expect_count}")
    if kind == "labels":
        return arr.astype(np.int64)
    if expect_shape is not None and arr.shape[1:] != tuple(expect_shape):
        raise IdxParseError(f"dimension mismatch at byte 8: image shape {arr.shape[1:]}, expected {expect_shape}")
    return arr.reshape(arr.shape[0], -1).astype(np.float64) / 255.0


def find_fashion_file(root, stem):
    root = Path(root)
    for name in (stem, stem + ".gz"):
        if (root / name).is_file():
            return root / name
    return None


def missing_fashion_files(root):
    return [stem for stem in FASHION_FILES.values() if find_fashion_file(root, stem) is None]


def load_fashion_mnist(root):
    """``(train, test)`` from a directory holding the four standard IDX files (raw or gzipped)."""
    missing = missing_fashion_files(root)
    if missing:
        raise FileNotFoundError(f"Fashion-MNIST files missing under {root}: {', '.join(missing)}")
    out = []
    for split in ("train", "test"):
        n = FASHION_SIZES[split]
        X = load_idx(find_fashion_file(root, FASHION_FILES[f"{split}_images"]), "images", n, (28, 28))
        y = load_idx(find_fashion_file(root, FASHION_FILES[f"{split}_labels"]), "labels", n)
        out.append(Dataset(X, y, 10))
    return tuple(out)


def synthesize_dataset(classes, dims, per_class, separation, rng, noise=1.0) -> Dataset:
    """Isotropic Gaussian blobs with pairwise mean distance ``separation``.

    Means sit on scaled coordinate axes when ``dims >= classes``, otherwise on
    random unit directions (spacing then only approximate).
    """
    if per_class < 1:
        raise DomainError("per_class must be >= 1; an empty dataset is useless")
    if not separation > 0:
        raise DomainError(f"separation must be positive, got {separation}")
    if dims >= classes:
        means = np.zeros((classes, dims))
        means[np.arange(classes), np.arange(classes)] = separation / np.sqrt(2)
    else:
        dirs = rng.standard_normal((classes, dims))
        means = separation / np.sqrt(2) * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    y = np.repeat(np.arange(classes), per_class)
    X = means[y] + noise * rng.standard_normal((len(y), dims))
    order = rng.permutation(len(y))
    return Dataset(X[order], y[order], classes)
