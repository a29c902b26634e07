"""IDX ingestion (MNIST / Fashion-MNIST), shuffling and mini-batching."""
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
N_CLASSES = 10


class IDXFormatError(ValueError):
    """Malformed or truncated IDX file."""


class ConsistencyError(ValueError):
    """Image and label files disagree."""


@dataclass(frozen=True)
class DataSet:
    images: np.ndarray  # (n, 784) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConsistencyError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self):
        return len(self.labels)

    def take(self, index):
        return DataSet(self.images[index], self.labels[index], self.split)


@dataclass(frozen=True)
class Batch:
    images: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, magic, path):
    if len(raw) < 8:
        raise IDXFormatError(f"{path}: file too short for an IDX header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise IDXFormatError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IDXFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    payload = raw[header:]
    if len(payload) != size:
        raise IDXFormatError(
            f"{path}: payload has {len(payload)} bytes, header promises {size}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def read_idx_images(path):
    """Raw uint8 image array of shape (n, rows, cols)."""
    return _parse_idx(_read_bytes(path), IMAGE_MAGIC, path)


def read_idx_labels(path):
    return _parse_idx(_read_bytes(path), LABEL_MAGIC, path)


def load_idx(images_path, labels_path, split="train"):
    """Load an image/label IDX pair; gzip is detected from the file header."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise ConsistencyError(
            f"{images_path} has {len(images)} images, {labels_path} has {len(labels)} labels"
        )
    if labels.size and labels.max() >= N_CLASSES:
        raise IDXFormatError(f"{labels_path}: label {labels.max()} >= {N_CLASSES}")
    flat = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return DataSet(flat, labels.astype(np.int64), split)


def write_idx(images, labels, images_path, labels_path, compress=False):
    """Write uint8 images (n, rows, cols) and labels (n,) as an IDX pair."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8 or labels.dtype != np.uint8:
        raise TypeError("IDX payloads must be uint8")
    if images.ndim != 3:
        raise ValueError("images must be (n, rows, cols)")
    opener = gzip.open if compress else open
    with opener(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())
    with opener(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


def to_uint8(data, side=28):
    """Inverse of the /255 scaling, for canonical dumps."""
    pixels = np.rint(data.images * 255.0).astype(np.uint8)
    return pixels.reshape(len(data), side, -1), data.labels.astype(np.uint8)


def shuffle_epoch(data, seed, epoch):
    """Permutation of sample indices, deterministic in (seed, epoch)."""
    rng = np.random.default_rng([int(seed), int(epoch)])
    return rng.permutation(len(data))


def batches(data, q, order=None):
    """Yield consecutive mini-batches of at most ``q`` samples."""
    if q < 1:
        raise ValueError("batch size must be >= 1")
    n = len(data)
    for start in range(0, n, q):
        if order is None:
            sl = slice(start, start + q)
            yield Batch(data.images[sl], data.labels[sl])
        else:
            idx = order[start:start + q]
            yield Batch(data.images[idx], data.labels[idx])


def subsample_index(labels, n, seed, stratified=True):
    """Sorted indices of a random subset of size ``n``."""
    size = len(labels)
    if n > size:
        raise ValueError(f"cannot take {n} samples from {size}")
    rng = np.random.default_rng(seed)
    if not stratified:
        return np.sort(rng.choice(size, n, replace=False))
    classes, counts = np.unique(labels, return_counts=True)
    exact = counts * n / size
    quota = np.floor(exact).astype(int)
    # largest remainder keeps every class within one sample of its exact share
    short = n - quota.sum()
    quota[np.argsort(-(exact - quota), kind="stable")[:short]] += 1
    picked = [rng.choice(np.flatnonzero(labels == c), k, replace=False)
              for c, k in zip(classes, quota)]
    return np.sort(np.concatenate(picked))


def subsample(data, n, seed, stratified=True):
    """Random subset of ``n`` samples, optionally preserving class proportions."""
    if n > len(data):
        raise ValueError(f"cannot take {n} samples from {len(data)}")
    if n == len(data):
        return data
    return data.take(subsample_index(data.labels, n, seed, stratified))
