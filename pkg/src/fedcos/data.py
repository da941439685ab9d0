"""Datasets, binary loaders, heterogeneity partitioners and batch sampling."""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .numkit import SeedPath
from .objectives import Batch

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073


class FormatError(ValueError):
    def __init__(self, message: str, offset: int | None = None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.offset = offset
        self.path = path


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    provenance: str = ""

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("label outside [0, n_classes)")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.n_classes,
                              self.provenance)

    def as_batch(self) -> Batch:
        return Batch(self.features, self.labels)


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read(path) -> bytes:
    with _open(path) as fh:
        return fh.read()


def load_idx(images_path, labels_path, n_classes: int = 10) -> LabeledDataset:
    """Load an IDX image/label pair (MNIST layout), scaling pixels to [0, 1]."""
    raw = _read(images_path)
    if len(raw) < 4:
        raise FormatError("truncated images header", 0, images_path)
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"bad images magic 0x{magic:08x}", 0, images_path)
    if len(raw) < 16:
        raise FormatError("truncated images header", len(raw), images_path)
    count, rows, cols = struct.unpack(">III", raw[4:16])
    need = 16 + count * rows * cols
    if len(raw) < need:
        raise FormatError(f"expected {need} bytes, file has {len(raw)}", len(raw), images_path)
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)

    lab = _read(labels_path)
    if len(lab) < 8:
        raise FormatError("truncated labels header", len(lab), labels_path)
    magic, n_labels = struct.unpack(">II", lab[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"bad labels magic 0x{magic:08x}", 0, labels_path)
    if n_labels != count:
        raise FormatError(f"{n_labels} labels for {count} images", 4, labels_path)
    if len(lab) < 8 + n_labels:
        raise FormatError(f"expected {8 + n_labels} bytes, file has {len(lab)}",
                          len(lab), labels_path)
    labels = np.frombuffer(lab, dtype=np.uint8, count=n_labels, offset=8).astype(np.int64)
    if n_labels and labels.max() >= n_classes:
        bad = int(np.argmax(labels >= n_classes))
        raise FormatError(f"label {labels[bad]} >= {n_classes}", 8 + bad, labels_path)

    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    return LabeledDataset(features, labels, n_classes, f"idx:{images_path}")


def load_cifar10_bin(paths: Sequence) -> LabeledDataset:
    """Concatenate CIFAR-10 binary batches: label byte then 3072 channel-planar pixels."""
    feats, labs = [], []
    for path in paths:
        raw = _read(path)
        if len(raw) % CIFAR_RECORD:
            whole = len(raw) - len(raw) % CIFAR_RECORD
            raise FormatError(f"length {len(raw)} is not a multiple of {CIFAR_RECORD}",
                              whole, path)
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        if len(rec) and rec[:, 0].max() >= 10:
            bad = int(np.argmax(rec[:, 0] >= 10))
            raise FormatError(f"label {rec[bad, 0]} >= 10", bad * CIFAR_RECORD, path)
        labs.append(rec[:, 0].astype(np.int64))
        feats.append(rec[:, 1:].astype(np.float64) / 255.0)
    if not feats:
        return LabeledDataset(np.zeros((0, 3072)), np.zeros(0, dtype=np.int64), 10, "cifar10:")
    return LabeledDataset(np.concatenate(feats), np.concatenate(labs), 10,
                          "cifar10:" + ",".join(str(p) for p in paths))


def blob_centers(n_classes: int, dim: int, seed: SeedPath) -> np.ndarray:
    rng = seed.child("centers", 0).rng()
    c = rng.standard_normal((n_classes, dim))
    return c / np.linalg.norm(c, axis=1, keepdims=True)


def gen_blobs(n_classes: int, per_class: int, dim: int, spread: float, seed: SeedPath,
              split: int = 0) -> LabeledDataset:
    """Isotropic Gaussian classes around unit-norm centers.

    Centers depend only on ``seed``; ``split`` picks an independent draw of
    samples, so a held-out set shares the training centers.
    """
    if min(n_classes, per_class, dim) < 1:
        raise ValueError("n_classes, per_class and dim must be positive")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    centers = blob_centers(n_classes, dim, seed)
    rng = seed.child("samples", split).rng()
    labels = np.repeat(np.arange(n_classes), per_class)
    noise = rng.standard_normal((len(labels), dim)) * spread
    features = centers[labels] + noise
    return LabeledDataset(features, labels, n_classes,
                          f"blobs(M={n_classes},per_class={per_class},dim={dim},"
                          f"spread={spread},seed={seed.root_seed},split={split})")


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str
    n_clients: int
    seed: SeedPath = field(default_factory=lambda: SeedPath(0))
    p: float = 1.0
    shards_per_client: int = 2

    SCHEMES = ("iid", "totally_noniid", "mixed", "shards")

    def __post_init__(self):
        if self.scheme not in self.SCHEMES:
            raise PartitionError(f"unknown scheme {self.scheme!r}")
        if self.n_clients < 1:
            raise PartitionError("n_clients must be positive")
        if self.scheme == "mixed" and not 0.0 <= self.p <= 1.0:
            raise PartitionError(f"mixed requires 0 <= p <= 1, got {self.p}")
        if self.scheme == "shards" and self.shards_per_client < 1:
            raise PartitionError("shards_per_client must be positive")


@dataclass(frozen=True)
class ClientSplit:
    indices: tuple[np.ndarray, ...]
    label_aligned: bool = False

    def __len__(self) -> int:
        return len(self.indices)

    def sizes(self) -> list[int]:
        return [len(ix) for ix in self.indices]


def _label_sorted(ds: LabeledDataset, n_clients: int) -> np.ndarray:
    """Indices kept after dropping the remainder, stably sorted by label."""
    usable = len(ds) - len(ds) % n_clients
    kept = np.arange(usable)
    return kept[np.argsort(ds.labels[:usable], kind="stable")]


def _contiguous(order: np.ndarray, n_clients: int) -> list[np.ndarray]:
    s = len(order) // n_clients
    return [order[i * s:(i + 1) * s].copy() for i in range(n_clients)]


def _disjoint_labels(ds: LabeledDataset, parts) -> bool:
    seen: set[int] = set()
    for ix in parts:
        labs = set(np.unique(ds.labels[ix]).tolist())
        if seen & labs:
            return False
        seen |= labs
    return True


def partition(ds: LabeledDataset, spec: PartitionSpec) -> ClientSplit:
    """Split ``ds`` across clients.

    The ``len(ds) % n_clients`` highest indices are dropped first so every
    client gets the same count.
    """
    n = spec.n_clients
    if len(ds) < n:
        raise PartitionError(f"{len(ds)} samples cannot feed {n} clients")
    rng = spec.seed.child("partition", 0).rng()

    if spec.scheme == "iid":
        usable = len(ds) - len(ds) % n
        parts = _contiguous(rng.permutation(usable), n)
        return ClientSplit(tuple(parts), False)

    order = _label_sorted(ds, n)
    if spec.scheme == "totally_noniid":
        parts = _contiguous(order, n)
        return ClientSplit(tuple(parts), _disjoint_labels(ds, parts))

    if spec.scheme == "mixed":
        parts = _contiguous(order, n)
        s = len(parts[0])
        keep = math.floor(spec.p * s + 1e-9)
        kept, pool = [], []
        for ix in parts:
            perm = rng.permutation(s)
            kept.append(ix[np.sort(perm[:keep])])
            pool.append(ix[perm[keep:]])
        pool = np.concatenate(pool)
        pool = pool[rng.permutation(len(pool))]
        share = len(pool) // n
        out = [np.concatenate([kept[i], pool[i * share:(i + 1) * share]]) for i in range(n)]
        return ClientSplit(tuple(out), keep == s and _disjoint_labels(ds, out))

    k = spec.shards_per_client
    total = k * n
    if total > len(order):
        raise PartitionError(f"shards: {total} shards exceed {len(order)} samples")
    shards = np.array_split(order, total)
    deal = rng.permutation(total)
    out = [np.concatenate([shards[j] for j in deal[i * k:(i + 1) * k]]) for i in range(n)]
    return ClientSplit(tuple(out), False)


def label_histograms(ds: LabeledDataset, split: ClientSplit) -> list[list[int]]:
    return [np.bincount(ds.labels[ix], minlength=ds.n_classes).tolist() for ix in split.indices]


def epoch_permutation(n: int, seed: SeedPath, epoch: int) -> np.ndarray:
    return seed.child("epoch", epoch).rng().permutation(n)


def sample_batch(ds: LabeledDataset, batch_size: int, seed: SeedPath, epoch: int = 0,
                 position: int = 0) -> Batch:
    """The ``position``-th batch of epoch ``epoch``; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    if len(ds) == 0:
        raise ValueError("cannot sample from an empty split")
    perm = epoch_permutation(len(ds), seed, epoch)
    ix = perm[position * batch_size:(position + 1) * batch_size]
    if len(ix) == 0:
        raise IndexError(f"epoch has no batch at position {position}")
    return Batch(ds.features[ix], ds.labels[ix])


class BatchStream:
    """Endless mini-batches: one seeded permutation per epoch, no replacement within it."""

    def __init__(self, ds: LabeledDataset, batch_size: int, seed: SeedPath):
        if batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if len(ds) == 0:
            raise ValueError("cannot sample from an empty split")
        self.ds = ds
        self.batch_size = batch_size
        self.seed = seed

    def __iter__(self) -> Iterator[Batch]:
        epoch = 0
        n, bs = len(self.ds), self.batch_size
        while True:
            perm = epoch_permutation(n, self.seed, epoch)
            for start in range(0, n, bs):
                ix = perm[start:start + bs]
                yield Batch(self.ds.features[ix], self.ds.labels[ix])
            epoch += 1


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (count x rows x cols) and labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols)
                                  + images.tobytes())
    labels = np.asarray(labels, dtype=np.uint8)
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels))
                                  + labels.tobytes())


def write_cifar10_bin(pixels: np.ndarray, labels: np.ndarray, path) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(labels), 3072)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], pixels], axis=1)
    Path(path).write_bytes(rec.tobytes())


def take_subset(ds: LabeledDataset, max_samples: Optional[int], seed: SeedPath) -> LabeledDataset:
    if max_samples is None or max_samples >= len(ds):
        return ds
    ix = np.sort(seed.child("subset", 0).rng().permutation(len(ds))[:max_samples])
    return ds.subset(ix)
