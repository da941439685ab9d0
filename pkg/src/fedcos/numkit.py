"""Vector helpers, seed derivation and the finite-difference gradient oracle."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Vector = np.ndarray


class DimensionError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


def as_vector(values) -> Vector:
    if type(values) is np.ndarray and values.dtype == np.float64 and values.ndim == 1:
        return values
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a flat vector, got shape {v.shape}")
    return v


def check_same_length(a: Vector, b: Vector) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")


def check_finite(v: Vector, what: str = "vector") -> Vector:
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return v


def cosine_between(a, b) -> float:
    """Cosine of the angle between ``a`` and ``b``.

    A zero-norm argument gives 1.0, so ``1 - cos`` vanishes for it.
    """
    a = as_vector(a)
    b = as_vector(b)
    check_same_length(a, b)
    ma = np.abs(a).max(initial=0.0)
    mb = np.abs(b).max(initial=0.0)
    if ma == 0.0 or mb == 0.0:
        return 1.0
    # rescale first so squaring tiny or huge entries cannot under/overflow
    a = a / ma
    b = b / mb
    c = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return min(1.0, max(-1.0, c))


def finite_diff_gradient(f: Callable[[Vector], float], x, h: float = 1e-6) -> Vector:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if not h > 0:
        raise ValueError("step h must be positive")
    x = as_vector(x).copy()
    grad = np.empty_like(x)
    for k in range(x.size):
        orig = x[k]
        x[k] = orig + h
        fp = f(x)
        x[k] = orig - h
        fm = f(x)
        x[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"f is not finite at probe along component {k}")
        grad[k] = (fp - fm) / (2.0 * h)
    return grad


@dataclass(frozen=True)
class SeedPath:
    """A root seed plus an ordered list of ``(tag, index)`` labels.

    ``SeedPath(7).child("client", 3).child("round", 17)`` names one stream.
    """

    root_seed: int
    labels: tuple[tuple[str, int], ...] = ()

    def child(self, tag: str, index: int) -> "SeedPath":
        return SeedPath(self.root_seed, self.labels + ((str(tag), int(index)),))

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(derive_seed(self))


def derive_seed(path: SeedPath) -> int:
    """Hash-mix a seed path into a 64-bit integer."""
    h = hashlib.blake2b(digest_size=8, person=b"fedcos-seed")
    h.update(struct.pack("<Q", path.root_seed & 0xFFFFFFFFFFFFFFFF))
    for tag, index in path.labels:
        raw = tag.encode("utf-8")
        h.update(struct.pack("<I", len(raw)))
        h.update(raw)
        h.update(struct.pack("<q", index))
    return int.from_bytes(h.digest(), "little")


def weighted_sum(vectors: Sequence[Vector], weights: Sequence[float]) -> Vector:
    """Sum ``w_i * v_i`` in the given order (no pairwise reassociation)."""
    out = np.zeros_like(vectors[0])
    for v, w in zip(vectors, weights):
        out += w * v
    return out
