"""Synthetic snowification, adapted from the ImageNet-C corruption family.

The snow field for one image is built from a frozen random seed matrix and
two severity dials that are linearly interpolated across the schedule:

1. draw a seed matrix the size of the image, entries Normal(mean, std),
   once per operator instance;
2. zoom its upper-left corner back to full size with bicubic spline
   interpolation (fixed zoom factor, default 1.25);
3. zero every value at or below the cut threshold (the "amount of snow"
   dial: the threshold decreases with t, so more of the field survives),
   then clip to [0, 1];
4. smear the surviving flakes with a 1-D Gaussian motion-blur kernel whose
   standard deviation is the "wind" dial (increasing with t), along a
   vertical or horizontal direction drawn once per instance;
5. add the smeared field and its 180-degree rotation to the image and clip
   to [0, 1].

Step 0 adds no snow at all, honoring the identity contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi

from .core import RngStream, validate_image
from .degrade import Degradation, gaussian_kernel_1d

__all__ = ["threshold_cut", "motion_blur_taps", "SnowDegradation"]


def threshold_cut(values: np.ndarray, threshold: float) -> np.ndarray:
    """Zero every entry at or below the threshold, keep the rest unchanged."""
    values = np.asarray(values, dtype=np.float64)
    return np.where(values <= threshold, 0.0, values)


def motion_blur_taps(std: float) -> np.ndarray:
    """1-D Gaussian motion-blur taps; length 2 * ceil(3 * std) + 1."""
    if std <= 0:
        raise ValueError(f"motion blur std must be positive, got {std}")
    length = 2 * int(np.ceil(3.0 * std)) + 1
    return gaussian_kernel_1d(length, std)


@dataclass
class SnowDegradation(Degradation):
    """Progressive snowification with a frozen per-instance seed matrix.

    `threshold_start/end` set the snow amount (cut threshold, decreasing
    with t) and `wind_start/end` the motion-blur standard deviation
    (increasing with t); both are linearly interpolated over t = 1..T.
    """

    shape: tuple[int, int]
    total_steps: int
    rng: RngStream
    mean: float = 0.55
    std: float = 0.3
    threshold_start: float = 1.15
    threshold_end: float = 0.7
    wind_start: float = 0.05
    wind_end: float = 16.0
    zoom_factor: float = 1.25
    family: str = field(default="snow", init=False)
    randomized: bool = field(default=True, init=False)

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise ValueError("snow schedule needs at least one step")
        gen = self.rng.generator()
        seed = gen.normal(self.mean, self.std, size=self.shape)
        # upper-left crop, zoomed back to full size with bicubic splines
        ch = int(np.ceil(self.shape[0] / self.zoom_factor))
        cw = int(np.ceil(self.shape[1] / self.zoom_factor))
        zoomed = ndi.zoom(seed[:ch, :cw], (self.shape[0] / ch, self.shape[1] / cw), order=3)
        self._field = zoomed[: self.shape[0], : self.shape[1]]
        self._axis = int(gen.integers(0, 2))  # 0: vertical smear, 1: horizontal

    def _dial(self, start: float, end: float, t: int) -> float:
        if self.total_steps == 1:
            return end
        return start + (end - start) * (t - 1) / (self.total_steps - 1)

    def snow_field(self, t: int) -> np.ndarray:
        """The additive snow layer at step t (before the rotated copy)."""
        cut = threshold_cut(self._field, self._dial(self.threshold_start, self.threshold_end, t))
        cut = np.clip(cut, 0.0, 1.0)
        taps = motion_blur_taps(self._dial(self.wind_start, self.wind_end, t))
        return ndi.convolve1d(cut, taps, axis=self._axis, mode="reflect")

    def _apply(self, x: np.ndarray, t: int) -> np.ndarray:
        validate_image(x)
        if x.shape[2] != 3:
            raise ValueError("snowification requires a 3-channel image")
        if x.shape[:2] != self.shape:
            raise ValueError(f"image shape {x.shape[:2]} does not match snow field {self.shape}")
        s = self.snow_field(t)
        flipped = np.rot90(s, 2)
        return np.clip(x + s[:, :, None] + flipped[:, :, None], 0.0, 1.0)

    def reseed(self, rng: RngStream) -> "SnowDegradation":
        return SnowDegradation(
            self.shape, self.total_steps, rng, self.mean, self.std,
            self.threshold_start, self.threshold_end,
            self.wind_start, self.wind_end, self.zoom_factor,
        )
