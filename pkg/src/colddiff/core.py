"""Shared image value conventions and the deterministic randomness contract.

Images are plain numpy arrays of shape (H, W, C) with float64 entries in the
nominal unit interval [0, 1].  Grayscale images carry an explicit trailing
channel axis of size 1.  8-bit integer data is converted with v / 255 on the
way in and round(v * 255) on the way out (see `to_uint8` / `from_uint8`);
everything in between runs in unclamped real arithmetic.

Randomness is counter-based: an `RngStream` is a (seed, stream) pair feeding
a Philox generator, so equal pairs give bit-identical draws across runs and
platforms, and child streams can be split off deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RngStream",
    "as_image",
    "validate_image",
    "validate_step",
    "clamp_unit",
    "channel_means",
    "to_uint8",
    "from_uint8",
]

_MASK64 = (1 << 64) - 1
_SPLIT_MIX = 0x9E3779B97F4A7C15  # odd 64-bit constant for stream splitting


@dataclass(frozen=True)
class RngStream:
    """Reproducible, splittable random stream.

    Identical (seed, stream) pairs produce bit-identical draw sequences.
    `child(i)` derives an independent stream deterministically, so every
    image / trajectory / batch can own its own replayable randomness.
    """

    seed: int
    stream: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream", int(self.stream) & _MASK64)

    def generator(self) -> np.random.Generator:
        """Fresh Philox generator keyed by (seed, stream)."""
        key = (self.seed << 64) | self.stream
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "RngStream":
        """Derive the index-th sub-stream (splitmix-style mixing)."""
        mixed = (self.stream * _SPLIT_MIX + int(index) + 1) & _MASK64
        mixed ^= mixed >> 31
        return RngStream(self.seed, mixed)


def as_image(data, channels: int | None = None) -> np.ndarray:
    """Coerce array-like data to a float64 (H, W, C) image.

    2-D input gains a trailing channel axis.  No range clamping is applied.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ValueError(f"image must be 2-D or 3-D, got shape {x.shape}")
    if channels is not None and x.shape[2] != channels:
        raise ValueError(f"expected {channels} channels, got {x.shape[2]}")
    return x


def validate_image(x: np.ndarray) -> np.ndarray:
    """Check (H, W, C) layout with C in {1, 3} and positive extent."""
    if not isinstance(x, np.ndarray) or x.ndim != 3:
        raise ValueError("image must be an (H, W, C) ndarray")
    h, w, c = x.shape
    if h < 1 or w < 1:
        raise ValueError(f"image extent must be positive, got {h}x{w}")
    if c not in (1, 3):
        raise ValueError(f"channel count must be 1 or 3, got {c}")
    return x


def validate_step(t: int, total: int) -> int:
    """Check a severity index t against a schedule length T (0 <= t <= T)."""
    t = int(t)
    if total < 1:
        raise ValueError(f"total steps must be positive, got {total}")
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    return t


def clamp_unit(x: np.ndarray) -> np.ndarray:
    """Clip every element to [0, 1].  Idempotent."""
    return np.clip(x, 0.0, 1.0)


def channel_means(x: np.ndarray) -> np.ndarray:
    """Arithmetic mean of each channel; length-C vector."""
    validate_image(x)
    return x.mean(axis=(0, 1))


def to_uint8(x: np.ndarray) -> np.ndarray:
    """Quantize unit-interval reals to bytes: round(v * 255) after clamping."""
    return np.round(clamp_unit(x) * 255.0).astype(np.uint8)


def from_uint8(b: np.ndarray) -> np.ndarray:
    """Bytes to unit-interval reals: v / 255."""
    return np.asarray(b, dtype=np.float64) / 255.0
