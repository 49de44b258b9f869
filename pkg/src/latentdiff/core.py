"""Shared numeric domain types and the elementary comparisons built on them.

Everything here is a pure function on immutable values; any number of
workers may call these concurrently.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LatentVector:
    """A point in a generator's input space; the genome of the search.

    Bounds are enforced at the sites that know them (search config,
    generator roles), not by the type itself.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values, np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("latent vector must be a non-empty 1-D array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("latent vector must be finite")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class Image:
    """Dense pixel grid in [0, 1], row-major and channel-interleaved."""

    width: int
    height: int
    channels: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        arr = _frozen_array(self.pixels, np.float32)
        expected = self.width * self.height * self.channels
        if arr.ndim != 1 or arr.size != expected:
            raise ValueError(
                f"pixel buffer has {arr.size} values, expected {expected}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("pixels must be finite")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("pixels must lie in [0, 1]")
        object.__setattr__(self, "pixels", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    def as_array(self) -> np.ndarray:
        """Pixels as an (H, W, C) float array."""
        return self.pixels.reshape(self.height, self.width, self.channels)

    def gray(self) -> np.ndarray:
        """(H, W) float64 view; RGB is reduced by channel mean."""
        return self.as_array().astype(np.float64).mean(axis=2)

    def flat(self) -> np.ndarray:
        """Flattened pixel vector (float64 copy)."""
        return self.pixels.astype(np.float64)


@dataclass(frozen=True)
class ProbabilityVector:
    """A classifier's output distribution over classes."""

    probs: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.probs, np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("probability vector must be non-empty")
        if arr.min() < -1e-12:
            raise ValueError("probabilities must be non-negative")
        total = float(arr.sum())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {total}, expected 1 within 1e-6")
        object.__setattr__(self, "probs", arr)

    def __len__(self) -> int:
        return int(self.probs.size)


@dataclass(frozen=True)
class ClassLabel:
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("class index must be non-negative")


def _probs(pv) -> np.ndarray:
    """Accept a ProbabilityVector or a bare vector.

    The comparisons tolerate unnormalized outputs (some published model
    outputs do not sum to one); the ProbabilityVector type enforces
    normalization where models hand over their results.
    """
    if isinstance(pv, ProbabilityVector):
        return pv.probs
    return np.asarray(pv, dtype=np.float64).ravel()


def argmax_label(pv) -> ClassLabel:
    """Label of the highest-probability class.

    Ties break toward the smallest class index so results are
    deterministic across platforms.
    """
    arr = _probs(pv)
    if arr.size == 0:
        raise ValueError("cannot take argmax of an empty probability vector")
    return ClassLabel(int(np.argmax(arr)))


def is_triggering(a, b) -> bool:
    """True iff the two distributions put their argmax on different classes."""
    av, bv = _probs(a), _probs(b)
    if av.size != bv.size:
        raise ValueError(f"length mismatch: {av.size} vs {bv.size}")
    return argmax_label(av) != argmax_label(bv)


def euclidean_distance(a, b) -> float:
    av, bv = _probs(a), _probs(b)
    if av.size != bv.size:
        raise ValueError(f"length mismatch: {av.size} vs {bv.size}")
    return float(np.linalg.norm(av - bv))


def cosine_distance(a, b) -> float:
    """1 - cos(a, b) for real vectors.

    A zero-norm vector is maximally unlike anything (distance 1); this keeps
    all-black images from dividing by zero.
    """
    av = np.asarray(a, dtype=np.float64).ravel()
    bv = np.asarray(b, dtype=np.float64).ravel()
    if av.size != bv.size:
        raise ValueError(f"length mismatch: {av.size} vs {bv.size}")
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        return 1.0
    return float(1.0 - float(av @ bv) / (na * nb))


def quantize_u8(image: Image) -> np.ndarray:
    """Pixels quantized to 256 levels (round half to even)."""
    return np.rint(image.pixels.astype(np.float64) * 255.0).astype(np.uint8)


def pixel_digest(image: Image) -> str:
    """Hex SHA-256 of the 8-bit-quantized pixel bytes.

    This is the identity used for byte-level dedup and for manifest
    integrity checks; it matches the bytes written to image files.
    """
    return hashlib.sha256(quantize_u8(image).tobytes()).hexdigest()
