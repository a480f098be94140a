"""Synthetic client datasets and their binary on-disk format.

Two kinds of heterogeneity are produced: feature-space shifts (rotations,
scalings, sign flips of the inputs, labels untouched) and label concept
shift (inputs untouched, labels moved by the derangement ``i -> i+1 mod C``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"FGMC"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class DatasetFormatError(ValueError):
    pass


@dataclass
class ClientDataset:
    client_id: int
    x: np.ndarray
    y: np.ndarray
    n_classes: int = field(default=0)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.ndim != 1 or len(self.x) != len(self.y):
            raise ValueError(f"inputs {self.x.shape} and labels {self.y.shape} disagree")
        if self.n_classes == 0:
            self.n_classes = int(self.y.max()) + 1 if len(self.y) else 0
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError(f"labels outside [0, {self.n_classes})")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx, client_id: int | None = None) -> "ClientDataset":
        cid = self.client_id if client_id is None else client_id
        return ClientDataset(cid, self.x[idx], self.y[idx], self.n_classes)

    def __eq__(self, other):
        if not isinstance(other, ClientDataset):
            return NotImplemented
        return (
            self.client_id == other.client_id
            and self.n_classes == other.n_classes
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )


def blob_centers(n_classes: int, dim: int, separation: float) -> np.ndarray:
    """Class means on a circle in the first two coordinates.

    Adjacent centers are ``separation`` apart (in units of the unit blob std).
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    centers = np.zeros((n_classes, dim))
    if dim == 1:
        centers[:, 0] = separation * np.arange(n_classes)
        return centers
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    radius = separation / (2 * np.sin(np.pi / n_classes))
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    return centers


def gen_base_task(
    n: int, n_classes: int, seed: int, dim: int = 2, separation: float = 6.0
) -> ClientDataset:
    """Balanced Gaussian-blob classification set with one unit-variance blob per class."""
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if n < 10 * n_classes:
        raise ValueError(f"n={n} is below 10 samples per class")
    rng = np.random.default_rng(seed)
    counts = np.full(n_classes, n // n_classes)
    counts[: n % n_classes] += 1
    y = np.repeat(np.arange(n_classes), counts)
    centers = blob_centers(n_classes, dim, separation)
    x = centers[y] + rng.standard_normal((n, dim))
    order = rng.permutation(n)
    return ClientDataset(0, x[order], y[order], n_classes)


def minmax_bounds(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    return lo, np.where(hi > lo, hi, lo + 1.0)


def minmax_scale(d: ClientDataset, lo, hi) -> ClientDataset:
    """Affine map of the inputs so that ``[lo, hi]`` becomes ``[0, 1]``."""
    x = (d.x - lo) / (np.asarray(hi) - np.asarray(lo))
    return ClientDataset(d.client_id, x, d.y, d.n_classes)


@dataclass(frozen=True)
class FeatureTransform:
    """Invertible input transform.

    kinds: ``rotation`` (``angle``, optional ``center`` and plane ``axes``),
    ``scale`` (per-coordinate ``factors``, all nonzero), ``flip`` (``axes`` to
    negate about ``center``).
    """

    kind: str
    angle: float = 0.0
    factors: tuple[float, ...] = ()
    axes: tuple[int, ...] = (0, 1)
    center: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rotation", "scale", "flip"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "scale" and (not self.factors or any(f == 0 for f in self.factors)):
            raise ValueError("scale factors must be nonzero")
        if self.kind == "rotation" and len(self.axes) != 2:
            raise ValueError("rotation needs exactly two axes")

    def inverse(self) -> "FeatureTransform":
        if self.kind == "rotation":
            return FeatureTransform("rotation", angle=-self.angle, axes=self.axes, center=self.center)
        if self.kind == "scale":
            return FeatureTransform("scale", factors=tuple(1.0 / f for f in self.factors), center=self.center)
        return self

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.array(x, dtype=np.float64, copy=True)
        if self.kind == "rotation":
            i, j = self.axes
            c, s = np.cos(self.angle), np.sin(self.angle)
            a = x[:, i] - self.center
            b = x[:, j] - self.center
            x[:, i] = c * a - s * b + self.center
            x[:, j] = s * a + c * b + self.center
        elif self.kind == "scale":
            f = np.asarray(self.factors, dtype=np.float64)
            if f.size not in (1, x.shape[1]):
                raise ValueError(f"{f.size} scale factors for {x.shape[1]} features")
            x = (x - self.center) * f + self.center
        else:
            for i in self.axes:
                x[:, i] = 2 * self.center - x[:, i]
        return x


def apply_feature_transform(d: ClientDataset, t: FeatureTransform) -> ClientDataset:
    return ClientDataset(d.client_id, t.apply(d.x), d.y.copy(), d.n_classes)


def apply_concept_shift(d: ClientDataset, frac: float, seed: int) -> ClientDataset:
    """Move the labels of exactly ``round(frac * n)`` seeded rows by one class."""
    if not 0.0 <= frac <= 1.0:
        raise ValueError(f"frac must be in [0, 1], got {frac}")
    rng = np.random.default_rng(seed)
    k = int(round(frac * d.n))
    rows = rng.choice(d.n, size=k, replace=False)
    y = d.y.copy()
    y[rows] = (y[rows] + 1) % d.n_classes
    return ClientDataset(d.client_id, d.x.copy(), y, d.n_classes)


def write_dataset(path, d: ClientDataset) -> None:
    """Little-endian: magic, version, n, dim, C, float32 inputs, uint16 labels."""
    if d.n_classes > 0xFFFF:
        raise ValueError("too many classes for uint16 labels")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, d.n, d.dim, d.n_classes)
    payload = d.x.astype("<f4").tobytes() + d.y.astype("<u2").tobytes()
    Path(path).write_bytes(header + payload)


def read_dataset(path, client_id: int = 0) -> ClientDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(f"{path}: file too short for header ({len(raw)} bytes)")
    magic, version, n, dim, n_classes = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * n * dim + 2 * n
    if len(raw) != expected:
        raise DatasetFormatError(f"{path}: payload is {len(raw)} bytes, header implies {expected}")
    off = _HEADER.size
    x = np.frombuffer(raw, dtype="<f4", count=n * dim, offset=off).reshape(n, dim)
    y = np.frombuffer(raw, dtype="<u2", count=n, offset=off + 4 * n * dim)
    if n and y.max() >= n_classes:
        raise DatasetFormatError(f"{path}: label {y.max()} outside [0, {n_classes})")
    return ClientDataset(client_id, x.astype(np.float64), y.astype(np.int64), n_classes)
