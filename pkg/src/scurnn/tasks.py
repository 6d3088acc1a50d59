"""Benchmark data: copying and adding problems, pixel-sequence MNIST."""

from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FormatError",
    "CopyingBatch",
    "AddingBatch",
    "MnistDataset",
    "gen_copying",
    "copying_baseline",
    "gen_adding",
    "adding_baseline",
    "one_hot",
    "load_mnist",
    "find_mnist_files",
    "mnist_permutation",
]

COPY_SYMBOLS = 10  # positions holding the payload
COPY_INPUT_DIM = 10  # 0 blank, 1-8 payload, 9 marker
COPY_CLASSES = 9  # marker never appears as a target
MARKER = 9


class FormatError(ValueError):
    """Malformed or truncated IDX file."""


@dataclass
class CopyingBatch:
    inputs: np.ndarray  # (batch, T + 20) ints in 0..9
    targets: np.ndarray  # (batch, T + 20) ints in 0..8

    def features(self) -> np.ndarray:
        return one_hot(self.inputs, COPY_INPUT_DIM)


@dataclass
class AddingBatch:
    values: np.ndarray  # (batch, T)
    markers: np.ndarray  # (batch, T), two ones per row
    targets: np.ndarray  # (batch,)

    def features(self) -> np.ndarray:
        return np.stack([self.values, self.markers.astype(np.float64)], axis=-1)


def one_hot(indices, depth: int) -> np.ndarray:
    indices = np.asarray(indices)
    return (indices[..., np.newaxis] == np.arange(depth)).astype(np.float64)


def gen_copying(T: int, batch: int, seed: int) -> CopyingBatch:
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(seed)
    length = T + 2 * COPY_SYMBOLS
    payload = rng.integers(1, 9, size=(batch, COPY_SYMBOLS))
    inputs = np.zeros((batch, length), dtype=np.int64)
    inputs[:, :COPY_SYMBOLS] = payload
    inputs[:, T + COPY_SYMBOLS] = MARKER
    targets = np.zeros((batch, length), dtype=np.int64)
    targets[:, -COPY_SYMBOLS:] = payload
    return CopyingBatch(inputs, targets)


def copying_baseline(T: int) -> float:
    """Cross entropy of emitting blanks, then guessing uniformly among the 8 symbols."""
    if T < 1:
        raise ValueError("T must be >= 1")
    return COPY_SYMBOLS * math.log(8) / (T + 2 * COPY_SYMBOLS)


def gen_adding(T: int, batch: int, seed: int) -> AddingBatch:
    if T < 2:
        raise ValueError("T must be >= 2")
    rng = np.random.default_rng(seed)
    values = rng.uniform(0.0, 1.0, size=(batch, T))
    half = T // 2
    first = rng.integers(0, half, size=batch)
    second = rng.integers(half, T, size=batch)
    markers = np.zeros((batch, T), dtype=np.int64)
    rows = np.arange(batch)
    markers[rows, first] = 1
    markers[rows, second] = 1
    targets = values[rows, first] + values[rows, second]
    return AddingBatch(values, markers, targets)


def adding_baseline() -> float:
    """MSE of always answering 1: the variance of a sum of two U[0,1) draws."""
    return 1.0 / 6.0


@dataclass
class MnistDataset:
    images: np.ndarray  # (count, 784) float64 in [0, 1], row-major pixels
    labels: np.ndarray  # (count,) int64
    permutation: np.ndarray | None = None

    def __len__(self) -> int:
        return self.labels.shape[0]

    def sequences(self, indices=None) -> np.ndarray:
        """Pixel sequences shaped ``(batch, 784, 1)``, permuted if configured."""
        images = self.images if indices is None else self.images[indices]
        if self.permutation is not None:
            images = images[:, self.permutation]
        return images[..., np.newaxis]

    def subset(self, indices) -> "MnistDataset":
        return MnistDataset(self.images[indices], self.labels[indices], self.permutation)


def _read_idx(path) -> tuple[int, tuple[int, ...], bytes]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{path}: corrupt gzip stream ({exc})") from exc
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    ndim = magic & 0xFF
    if magic >> 8 != 0x08 or ndim not in (1, 3):
        raise FormatError(f"{path}: bad magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    payload = raw[header:]
    if len(payload) < math.prod(dims):
        raise FormatError(f"{path}: expected {math.prod(dims)} bytes of data, found {len(payload)}")
    return magic, dims, payload[: math.prod(dims)]


def mnist_permutation(seed: int, size: int = 784) -> np.ndarray:
    return np.random.default_rng(seed).permutation(size)


def load_mnist(images_path, labels_path, permutation_seed: int | None = None) -> MnistDataset:
    """Read an IDX image/label pair (optionally gzipped).

    With ``permutation_seed`` one fixed pixel permutation, drawn from that
    seed, is attached to the dataset; the same seed yields the same
    permutation for train and test files.
    """
    magic, dims, payload = _read_idx(images_path)
    if magic != 0x00000803:
        raise FormatError(f"{images_path}: expected image magic 0x00000803, got 0x{magic:08x}")
    count, rows, cols = dims
    images = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols) / 255.0

    magic, dims, payload = _read_idx(labels_path)
    if magic != 0x00000801:
        raise FormatError(f"{labels_path}: expected label magic 0x00000801, got 0x{magic:08x}")
    labels = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
    if labels.shape[0] != count:
        raise ValueError(f"{count} images but {labels.shape[0]} labels")

    perm = None if permutation_seed is None else mnist_permutation(permutation_seed, rows * cols)
    return MnistDataset(images, labels, perm)


_SPLITS = {"train": "train", "test": "t10k"}


def find_mnist_files(data_dir, split: str) -> tuple[str, str]:
    """Locate the image/label files of ``split`` under common naming variants."""
    prefix = _SPLITS[split]
    found = []
    for kind, ext in (("images", "idx3"), ("labels", "idx1")):
        candidates = [
            f"{prefix}-{kind}-{ext}-ubyte",
            f"{prefix}-{kind}.{ext}-ubyte",
        ]
        for name in list(candidates):
            candidates.append(name + ".gz")
        for name in candidates:
            path = os.path.join(data_dir, name)
            if os.path.exists(path):
                found.append(path)
                break
        else:
            raise FileNotFoundError(f"no MNIST {split} {kind} file in {data_dir} (tried {candidates})")
    return found[0], found[1]
