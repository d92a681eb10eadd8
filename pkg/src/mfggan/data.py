"""Samplers for targets, noise and time, plus the MNIST IDX reader.

All samplers draw from an explicit ``numpy.random.Generator``; the trainer
derives one generator per step from ``(seed, stream, step)`` so runs are
reproducible and resumable.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    IdxDimensionError,
    IdxMagicError,
    IdxTruncatedError,
    MissingDatasetError,
    PreconditionError,
    SpecError,
)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

STREAM_TRAIN = 0
STREAM_EVAL = 1


def make_rng(seed, *keys):
    """A Philox generator keyed by ``seed`` and any extra integer keys."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


@dataclass(frozen=True)
class GaussianTarget:
    mean: np.ndarray
    covariance: np.ndarray
    cholesky_factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.shape != (mean.size, mean.size):
            raise SpecError(f"covariance shape {cov.shape} does not match mean dimension {mean.size}")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
            raise SpecError("covariance is not symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise SpecError("covariance is not positive definite") from None
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "cholesky_factor", chol)

    @classmethod
    def isotropic(cls, dim, center=5.0, scale=1.0):
        return cls(np.full(dim, float(center)), np.eye(dim) * float(scale))

    @property
    def dim(self):
        return self.mean.size

    def sample(self, n, rng):
        return sample_gaussian(self, n, rng)

    def moments(self):
        return self.mean, self.covariance


def sample_gaussian(target, n, rng):
    if n < 1:
        raise PreconditionError("sample count must be >= 1")
    xi = rng.standard_normal((n, target.dim))
    return target.mean + xi @ target.cholesky_factor.T


def sample_noise(n, d, rng):
    if n < 1 or d < 1:
        raise PreconditionError("noise needs n >= 1 and d >= 1")
    return rng.standard_normal((n, d))


def sample_time(n, rng):
    if n < 1:
        raise PreconditionError("time sample count must be >= 1")
    return rng.uniform(0.0, 1.0, size=(n, 1))


@dataclass
class ImageDataset:
    images: np.ndarray
    count: int

    @property
    def dim(self):
        return self.images.shape[1]

    def sample(self, n, rng):
        if n < 1:
            raise PreconditionError("sample count must be >= 1")
        return self.images[rng.integers(0, self.count, size=n)]

    def moments(self, limit=10000):
        # a fixed leading subset keeps the reference cheap and deterministic
        ref = self.images[:limit]
        return ref.mean(axis=0), np.cov(ref, rowvar=False)


def _open_bytes(path):
    path = Path(path)
    if not path.exists():
        raise MissingDatasetError(f"dataset file not found: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx_images(path):
    """Read an IDX3 image file (optionally gzipped) into pixels in [0, 1]."""
    raw = _open_bytes(path)
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: missing IDX magic")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != IDX_IMAGES_MAGIC:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x} (images)")
    if len(raw) < 16:
        raise IdxTruncatedError(f"{path}: header truncated")
    n, rows, cols = struct.unpack(">III", raw[4:16])
    if (rows, cols) != (28, 28):
        raise IdxDimensionError(f"{path}: images are {rows}x{cols}, expected 28x28")
    need = n * rows * cols
    payload = raw[16:]
    if len(payload) < need:
        raise IdxTruncatedError(f"{path}: expected {need} pixel bytes, found {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8, count=need).reshape(n, rows * cols)
    return ImageDataset(pixels.astype(np.float64) / 255.0, n)


def write_idx_images(path, images):
    """Write uint8 images of shape (n, 28, 28) or (n, 784) as IDX3."""
    images = np.asarray(images, dtype=np.uint8).reshape(-1, 28, 28)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, images.shape[0], 28, 28))
        fh.write(images.tobytes())
    return Path(path)
