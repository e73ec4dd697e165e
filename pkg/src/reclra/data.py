"""Dataset loading, preprocessing and seeded mini-batch iteration.

Supported on-disk formats:

* IDX (MNIST, Fashion-MNIST): big-endian, magic 2051 for images and 2049 for
  labels, optionally gzip-compressed. Pixels are scaled to [0, 1] by /255.
* CIFAR-10 binary: records of one label byte plus 3072 channel-major pixel
  bytes (1024 red, 1024 green, 1024 blue).
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import DataFormatError
from .tensor import RngStream

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD = 3073


@dataclass(frozen=True)
class Dataset:
    """``features`` is ``N x I`` float64; ``image_shape`` is ``(C, H, W)``."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    image_shape: tuple[int, int, int]

    def __post_init__(self):
        if self.features.ndim != 2:
            raise DataFormatError(f"features must be N x I, got {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise DataFormatError("features contain NaN or infinity")
        if len(self.labels) != len(self.features):
            raise DataFormatError(
                f"{len(self.features)} feature rows but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataFormatError("labels fall outside 0..num_classes-1")
        if int(np.prod(self.image_shape)) != self.features.shape[1]:
            raise DataFormatError(f"image shape {self.image_shape} does not match "
                                  f"{self.features.shape[1]} features")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def onehot(self) -> np.ndarray:
        return one_hot(self.labels, self.num_classes)

    @property
    def input_shape(self) -> tuple[int, int]:
        """(channels, pixels per channel) as the network expects it."""
        c, h, w = self.image_shape
        return c, h * w

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return replace(self, features=self.features[index], labels=self.labels[index])


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _read_bytes(path) -> bytes:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise DataFormatError(f"{path}: corrupt gzip stream") from exc
    return raw


def _idx_array(raw: bytes, magic: int, rank: int, path) -> np.ndarray:
    header = 4 + 4 * rank
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise DataFormatError(f"{path}: bad IDX magic {found}, expected {magic}")
    dims = struct.unpack(f">{rank}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise DataFormatError(
            f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes: int = 10) -> Dataset:
    images = _idx_array(_read_bytes(images_path), IDX_IMAGES_MAGIC, 3, images_path)
    labels = _idx_array(_read_bytes(labels_path), IDX_LABELS_MAGIC, 1, labels_path)
    if len(images) != len(labels):
        raise DataFormatError(
            f"{images_path} holds {len(images)} images but {labels_path} {len(labels)} labels")
    n, h, w = images.shape
    features = images.reshape(n, h * w).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), num_classes, (1, h, w))


def write_idx(images_path, labels_path, images: np.ndarray, labels) -> None:
    """Write uint8 images ``N x H x W`` and labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    Path(images_path).write_bytes(
        struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + images.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def load_cifar10(paths: Sequence) -> Dataset:
    if isinstance(paths, (str, Path)):
        paths = [paths]
    chunks = []
    for path in paths:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise DataFormatError(
                f"{path}: {len(raw)} bytes is not a whole number of {CIFAR_RECORD}-byte records")
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    records = np.concatenate(chunks)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DataFormatError("CIFAR-10 label byte above 9")
    features = records[:, 1:].astype(np.float64) / 255.0
    return Dataset(features, labels, 10, (3, 32, 32))


def write_cifar10(path, images: np.ndarray, labels) -> None:
    """Write uint8 images ``N x 3 x 32 x 32`` as CIFAR-10 binary records."""
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    labels = np.asarray(labels, dtype=np.uint8)[:, None]
    Path(path).write_bytes(np.concatenate([labels, images], axis=1).tobytes())


def gcn(ds: Dataset, scale: bool = False, eps: float = 1e-8) -> Dataset:
    """Subtract each image's per-channel mean; optionally divide by its std."""
    c, h, w = ds.image_shape
    x = ds.features.reshape(len(ds), c, h * w)
    x = x - x.mean(axis=2, keepdims=True)
    if scale:
        x = x / (x.std(axis=2, keepdims=True) + eps)
    return replace(ds, features=x.reshape(len(ds), -1))


@dataclass(frozen=True)
class ZcaModel:
    mean: np.ndarray
    matrix: np.ndarray
    eps: float


def zca_fit(train: Dataset, eps: float = 1e-5, max_samples: int = 10_000,
            seed: int = 0) -> ZcaModel:
    """Fit centering + rotate / normalise principal components / rotate back.

    At most ``max_samples`` rows (drawn with ``seed``) enter the covariance.
    """
    if not eps >= 0:
        raise ValueError("eps must be nonnegative")
    x = train.features
    if len(x) > max_samples:
        x = x[np.sort(RngStream(seed).permutation(len(x))[:max_samples])]
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / len(xc)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    if eps == 0 and np.min(evals) <= 1e-12 * max(np.max(evals), 1e-300):
        raise np.linalg.LinAlgError("covariance is singular; use eps > 0")
    matrix = (evecs / np.sqrt(evals + eps)) @ evecs.T
    matrix = 0.5 * (matrix + matrix.T)
    return ZcaModel(mean, matrix, eps)


def zca_apply(model: ZcaModel, ds: Dataset) -> Dataset:
    return replace(ds, features=(ds.features - model.mean) @ model.matrix)


@dataclass(frozen=True)
class Preprocessor:
    """Preprocessing fitted on a training split and replayed on other splits.

    ``gcn_mode`` is ``"none"``, ``"mean"`` or ``"scaled"``.
    """

    gcn_mode: str = "none"
    zca: ZcaModel | None = None

    @classmethod
    def fit(cls, train: Dataset, gcn_mode: str = "none", use_zca: bool = False,
            zca_eps: float = 1e-5, zca_max_samples: int = 10_000, seed: int = 0):
        if gcn_mode not in ("none", "mean", "scaled"):
            raise ValueError(f"unknown gcn mode {gcn_mode!r}")
        pre = cls(gcn_mode)
        if use_zca:
            pre = cls(gcn_mode, zca_fit(pre._gcn(train), zca_eps, zca_max_samples, seed))
        return pre

    def _gcn(self, ds: Dataset) -> Dataset:
        if self.gcn_mode == "none":
            return ds
        return gcn(ds, scale=self.gcn_mode == "scaled")

    def apply(self, ds: Dataset) -> Dataset:
        ds = self._gcn(ds)
        return zca_apply(self.zca, ds) if self.zca is not None else ds

    def to_records(self) -> tuple[dict, dict]:
        meta = {"gcn": self.gcn_mode, "zca": self.zca is not None}
        arrays = {}
        if self.zca is not None:
            meta["zca_eps"] = self.zca.eps
            arrays = {"pre:zca_mean": self.zca.mean, "pre:zca_matrix": self.zca.matrix}
        return meta, arrays

    @classmethod
    def from_records(cls, meta: dict, arrays: dict) -> "Preprocessor":
        zca = None
        if meta.get("zca"):
            zca = ZcaModel(arrays["pre:zca_mean"], arrays["pre:zca_matrix"], meta["zca_eps"])
        return cls(meta.get("gcn", "none"), zca)


def split(ds: Dataset, n_val: int, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded disjoint split into ``(train, validation)``."""
    if not 0 <= n_val < len(ds):
        raise ValueError(f"n_val must lie in [0, {len(ds)}), got {n_val}")
    perm = RngStream(seed).permutation(len(ds))
    return ds.subset(np.sort(perm[n_val:])), ds.subset(np.sort(perm[:n_val]))


def batch_indices(n: int, size: int, seed: int) -> Iterator[np.ndarray]:
    if size <= 0:
        raise ValueError("batch size must be positive")
    perm = RngStream(seed).permutation(n)
    for start in range(0, n, size):
        yield perm[start:start + size]


class Batch(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    labels: np.ndarray
    index: np.ndarray


def batches(ds: Dataset, size: int, seed: int) -> Iterator[Batch]:
    """One epoch of shuffled mini-batches; the last batch may be short."""
    onehot = ds.onehot
    for idx in batch_indices(len(ds), size, seed):
        yield Batch(ds.features[idx], onehot[idx], ds.labels[idx], idx)


def _first_existing(directory: Path, names) -> Path:
    for name in names:
        for candidate in (directory / name, directory / (name + ".gz")):
            if candidate.exists():
                return candidate
    raise DataFormatError(f"none of {list(names)} found in {directory}")


def load_directory(directory, split_name: str = "train") -> Dataset:
    """Load the ``train`` or ``test`` split from a standard dataset directory.

    Recognises the usual MNIST/Fashion-MNIST IDX file names and the CIFAR-10
    binary batches (``data_batch_1..5.bin``, ``test_batch.bin``), also inside a
    ``cifar-10-batches-bin`` subdirectory.
    """
    directory = Path(directory)
    if split_name not in ("train", "test"):
        raise ValueError("split must be 'train' or 'test'")
    for cdir in (directory, directory / "cifar-10-batches-bin"):
        if (cdir / "test_batch.bin").exists():
            if split_name == "train":
                return load_cifar10([cdir / f"data_batch_{k}.bin" for k in range(1, 6)])
            return load_cifar10([cdir / "test_batch.bin"])
    prefix = "train" if split_name == "train" else "t10k"
    images = _first_existing(directory, [f"{prefix}-images-idx3-ubyte", f"{prefix}-images.idx3-ubyte"])
    labels = _first_existing(directory, [f"{prefix}-labels-idx1-ubyte", f"{prefix}-labels.idx1-ubyte"])
    return load_idx(images, labels)
