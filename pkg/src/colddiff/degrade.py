"""Severity-indexed image degradation operators.

Every operator realizes the same contract: a total step count T, continuous
severity in the step index t, an exact identity at t = 0, and purity: the
output is a function of (input, t, operator state) alone.  Randomized
families (mask placement, interpolation anchors, solid fill colors) freeze
their random draws at construction time from an explicit `RngStream`, so a
given operator instance is replayable; `reseed` derives a fresh realization.

Families implemented here:

- blur:        x_t = g_t * ... * g_1 * x_0  (recursive Gaussian convolution,
               reflect boundary; an optional precomposed-kernel fast path
               composes the t per-step kernels into one)
- mask:        x_t = x_0 . prod_i (1 - gauss_i), a Gaussian gray-out growing
               around a fixed center, rounded to 8 decimals
- solid mask:  x_t = m_t . x_0 + (1 - m_t) . c  for a constant fill color c
- downsample:  t rounds of 2x2 average pooling, then nearest-neighbor
               upsampling back to the input resolution
- desaturate:  per-pixel blend toward the RGB mean with weight t / T
- interp:      x_t = sqrt(a_t) x + sqrt(1 - a_t) z for a frozen anchor z
               (standard-normal noise or a donor image)
- linear:      x_t = x + t . e, the exactly-linear test operator

Snowification lives in `colddiff.snow`; the preset registry in
`colddiff.presets` covers all families.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi

from .core import RngStream, as_image, validate_image, validate_step

__all__ = [
    "Degradation",
    "gaussian_kernel",
    "gaussian_kernel_1d",
    "separable_convolve",
    "BlurDegradation",
    "blur_sigmas",
    "incremental_mask",
    "MaskDegradation",
    "DownsampleDegradation",
    "DesaturateDegradation",
    "cosine_alphas",
    "InterpDegradation",
    "LinearDegradation",
]


class Degradation:
    """Base contract for severity-indexed degradations D(x, t).

    Subclasses set `family` and `total_steps` and implement `_apply`;
    the t = 0 identity and input validation are handled here.
    """

    family = "abstract"
    randomized = False
    total_steps: int  # every subclass sets this; deliberately no base value

    def __call__(self, x: np.ndarray, t: int) -> np.ndarray:
        x = validate_image(as_image(x))
        t = validate_step(t, self.total_steps)
        if t == 0:
            return x.copy()
        return self._apply(x, t)

    def _apply(self, x: np.ndarray, t: int) -> np.ndarray:
        raise NotImplementedError

    def apply_batch(self, xs: np.ndarray, t: int) -> np.ndarray:
        """Apply the same severity to a (B, H, W, C) stack."""
        return np.stack([self(x, t) for x in xs])

    def reseed(self, rng: RngStream) -> "Degradation":
        """Fresh realization of any frozen randomness; identity if none."""
        return self


# ---------------------------------------------------------------------------
# kernels and convolution plumbing
# ---------------------------------------------------------------------------

def gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps exp(-u^2 / (2 sigma^2)) on the centered grid."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    u = np.arange(size, dtype=np.float64) - (size - 1) / 2
    k = np.exp(-(u * u) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized 2-D Gaussian kernel on the centered size x size integer grid."""
    k = gaussian_kernel_1d(size, sigma)
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def separable_convolve(x: np.ndarray, taps: np.ndarray, axes: tuple[int, int]) -> np.ndarray:
    """Convolve with outer(taps, taps) along two axes, reflect boundary.

    Reflection is half-sample symmetric, which with a normalized symmetric
    kernel preserves both constants and the total pixel sum exactly.
    """
    out = ndi.convolve1d(x, taps, axis=axes[0], mode="reflect")
    return ndi.convolve1d(out, taps, axis=axes[1], mode="reflect")


def blur_sigmas(total_steps: int, mode: str = "constant", *, sigma: float = 1.0,
                slope: float = 0.0, intercept: float = 0.0, start: float = 1.0,
                rate: float = 0.01, compound: bool = True) -> tuple[float, ...]:
    """Per-step standard deviations sigma_1 .. sigma_T for the blur family.

    Modes: "constant" (sigma for every step), "linear" (slope * t + intercept),
    "exponential" (start at sigma_1 = start, growing by `rate` per step,
    compounded as start * (1 + rate)^(t-1) or, with compound=False, as
    start * exp(rate * (t-1))).
    """
    ts = np.arange(1, total_steps + 1, dtype=np.float64)
    if mode == "constant":
        sig = np.full(total_steps, float(sigma))
    elif mode == "linear":
        sig = slope * ts + intercept
    elif mode == "exponential":
        if compound:
            sig = start * np.power(1.0 + rate, ts - 1)
        else:
            sig = start * np.exp(rate * (ts - 1))
    else:
        raise ValueError(f"unknown sigma schedule mode {mode!r}")
    if np.any(sig <= 0):
        raise ValueError("blur sigmas must be positive")
    if np.any(np.diff(sig) < 0):
        raise ValueError("blur sigmas must be nondecreasing")
    return tuple(float(s) for s in sig)


@dataclass
class BlurDegradation(Degradation):
    """Recursive Gaussian blur: t sequential convolutions with kernel size
    `kernel_size` and per-step sigmas, reflect boundary handling.

    `method="composed"` is a fast path that convolves the t per-step tap
    vectors into a single long kernel first; it matches the sequential
    reference on interior pixels (boundary reflection orders differ).
    """

    kernel_size: int
    sigmas: tuple[float, ...]
    family: str = field(default="blur", init=False)
    _taps: list[np.ndarray] = field(init=False, repr=False)
    _composed: dict[int, np.ndarray] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        self.total_steps = len(self.sigmas)
        if self.total_steps < 1:
            raise ValueError("blur schedule needs at least one step")
        self._taps = [gaussian_kernel_1d(self.kernel_size, s) for s in self.sigmas]

    def _apply(self, x: np.ndarray, t: int) -> np.ndarray:
        out = x
        for i in range(t):
            out = separable_convolve(out, self._taps[i], axes=(0, 1))
        return out

    def apply_batch(self, xs: np.ndarray, t: int) -> np.ndarray:
        if t == 0:
            return np.asarray(xs, dtype=np.float64).copy()
        out = np.asarray(xs, dtype=np.float64)
        for i in range(t):
            out = separable_convolve(out, self._taps[i], axes=(1, 2))
        return out

    def composed_taps(self, t: int) -> np.ndarray:
        """1-D taps of the cumulative kernel for step t (length t*(k-1)+1)."""
        validate_step(t, self.total_steps)
        if t == 0:
            return np.array([1.0])
        if t not in self._composed:
            taps = self._taps[0]
            for i in range(1, t):
                taps = np.convolve(taps, self._taps[i])
            self._composed[t] = taps
        return self._composed[t]

    def composed_kernel(self, t: int) -> np.ndarray:
        """Cumulative 2-D kernel: outer product of the composed taps."""
        taps = self.composed_taps(t)
        return np.outer(taps, taps)

    def apply_composed(self, x: np.ndarray, t: int) -> np.ndarray:
        """Single-convolution fast path using the precomposed kernel."""
        x = validate_image(as_image(x))
        t = validate_step(t, self.total_steps)
        if t == 0:
            return x.copy()
        return separable_convolve(x, self.composed_taps(t), axes=(0, 1))


# ---------------------------------------------------------------------------
# Gaussian gray-out masks
# ---------------------------------------------------------------------------

def incremental_mask(shape: tuple[int, int], center: tuple[int, int], beta: float) -> np.ndarray:
    """One gray-out mask: 1 minus a peak-normalized Gaussian of variance beta.

    The mask is 0 at `center` and approaches 1 with distance, so repeated
    entrywise multiplication removes a growing disk of the image.
    """
    if beta <= 0:
        raise ValueError(f"mask variance must be positive, got {beta}")
    rows = np.arange(shape[0], dtype=np.float64)[:, None] - center[0]
    cols = np.arange(shape[1], dtype=np.float64)[None, :] - center[1]
    d2 = rows * rows + cols * cols
    return 1.0 - np.exp(-d2 / (2.0 * beta))


@dataclass
class MaskDegradation(Degradation):
    """Progressive Gaussian gray-out, optionally blending to a solid color.

    Plain mode multiplies x by the cumulative mask and rounds the result to
    8 decimal digits (information-leakage guard on the float mask values).
    With `color` set, the cumulative mask m_t blends instead:
    x_t = m_t . x + (1 - m_t) . color, with no rounding.
    """

    betas: tuple[float, ...]
    shape: tuple[int, int]
    center: tuple[int, int] | None = None
    color: np.ndarray | None = None
    randomize_center: bool = False
    family: str = field(default="mask", init=False)
    _cum: dict[int, np.ndarray] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        self.total_steps = len(self.betas)
        if self.total_steps < 1:
            raise ValueError("mask schedule needs at least one step")
        diffs = np.diff(self.betas)
        if np.any(np.asarray(self.betas) <= 0) or np.any(diffs <= 0):
            raise ValueError("mask variances must be positive and strictly increasing")
        if self.center is None:
            self.center = (self.shape[0] // 2, self.shape[1] // 2)
        self.randomized = self.randomize_center or self.color is not None
        if self.color is not None:
            self.color = np.asarray(self.color, dtype=np.float64).reshape(-1)

    def step_mask(self, i: int) -> np.ndarray:
        """The single-step mask for step i (1-based)."""
        if not 1 <= i <= self.total_steps:
            raise ValueError(f"step index {i} outside 1..{self.total_steps}")
        return incremental_mask(self.shape, self.center, self.betas[i - 1])

    def cumulative_mask(self, t: int) -> np.ndarray:
        """Entrywise product of the first t step masks."""
        validate_step(t, self.total_steps)
        if t == 0:
            return np.ones(self.shape)
        if t not in self._cum:
            prev = self.cumulative_mask(t - 1)
            self._cum[t] = prev * self.step_mask(t)
        return self._cum[t]

    def _apply(self, x: np.ndarray, t: int) -> np.ndarray:
        if x.shape[:2] != self.shape:
            raise ValueError(f"image shape {x.shape[:2]} does not match mask shape {self.shape}")
        m = self.cumulative_mask(t)[:, :, None]
        if self.color is not None:
            if self.color.size != x.shape[2]:
                raise ValueError("fill color channel count does not match image")
            return m * x + (1.0 - m) * self.color[None, None, :]
        return np.round(m * x, 8)

    def reseed(self, rng: RngStream) -> "MaskDegradation":
        if not self.randomized:
            return self
        gen = rng.generator()
        center = self.center
        if self.randomize_center:
            center = (int(gen.integers(0, self.shape[0])), int(gen.integers(0, self.shape[1])))
        color = self.color
        if color is not None:
            color = gen.uniform(0.0, 1.0, size=color.size)
        return MaskDegradation(self.betas, self.shape, center, color, self.randomize_center)


# ---------------------------------------------------------------------------
# resolution and color removal
# ---------------------------------------------------------------------------

@dataclass
class DownsampleDegradation(Degradation):
    """t rounds of 2x2 average pooling, then nearest-neighbor upsampling
    back to the original resolution.  Requires sides divisible by 2^t.
    """

    total_steps: int
    family: str = field(default="downsample", init=False)

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise ValueError("downsample schedule needs at least one step")

    def _apply(self, x: np.ndarray, t: int) -> np.ndarray:
        h, w, c = x.shape
        f = 2 ** t
        if h % f or w % f:
            raise ValueError(f"image {h}x{w} not divisible by 2^{t}")
        small = x.reshape(h // f, f, w // f, f, c).mean(axis=(1, 3))
        return np.repeat(np.repeat(small, f, axis=0), f, axis=1)


@dataclass
class DesaturateDegradation(Degradation):
    """Blend each pixel toward its RGB mean with weight t / T.

    At t = T all three channels equal the pixelwise mean (full grayscale);
    intermediate steps compose so that the cumulative operator at step t is
    exactly the blend with weight t / T.
    """

    total_steps: int
    family: str = field(default="desaturate", init=False)

    def _apply(self, x: np.ndarray, t: int) -> np.ndarray:
        if x.shape[2] != 3:
            raise ValueError("desaturation requires a 3-channel image")
        alpha = t / self.total_steps
        mean = x.mean(axis=2, keepdims=True)
        return alpha * mean + (1.0 - alpha) * x


# ---------------------------------------------------------------------------
# anchored interpolation (frozen noise or donor image)
# ---------------------------------------------------------------------------

def cosine_alphas(total_steps: int, offset: float = 0.008) -> np.ndarray:
    """Cosine interpolation weights a_0 .. a_T, normalized so a_0 = 1.

    a_t = cos^2(((t/T + offset) / (1 + offset)) * pi/2) / same at t = 0;
    strictly decreasing, ending at a_T = 0.
    """
    ts = np.arange(total_steps + 1, dtype=np.float64) / total_steps
    f = np.cos((ts + offset) / (1.0 + offset) * np.pi / 2.0) ** 2
    return f / f[0]


@dataclass
class InterpDegradation(Degradation):
    """x_t = sqrt(a_t) x + sqrt(1 - a_t) z for a frozen anchor z.

    The anchor is a standard-normal noise field (family "noise_interp") or
    a donor image from another dataset (family "donor_interp"); it is fixed
    for the lifetime of the instance so a sampler sees one realization.
    """

    alphas: np.ndarray
    anchor: np.ndarray
    kind: str = "noise"

    def __post_init__(self) -> None:
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        self.total_steps = len(self.alphas) - 1
        if self.total_steps < 1:
            raise ValueError("interpolation schedule needs at least one step")
        if self.alphas[0] != 1.0:
            raise ValueError("interpolation weights must start at 1")
        if np.any(np.diff(self.alphas) >= 0):
            raise ValueError("interpolation weights must be strictly decreasing")
        if np.any(self.alphas < 0) or np.any(self.alphas > 1):
            raise ValueError("interpolation weights must lie in [0, 1]")
        self.anchor = as_image(self.anchor)
        if self.kind not in ("noise", "donor"):
            raise ValueError(f"unknown anchor kind {self.kind!r}")
        self.family = "noise_interp" if self.kind == "noise" else "donor_interp"
        self.randomized = self.kind == "noise"

    def _apply(self, x: np.ndarray, t: int) -> np.ndarray:
        if x.shape != self.anchor.shape:
            raise ValueError(f"anchor shape {self.anchor.shape} does not match image {x.shape}")
        a = self.alphas[t]
        return np.sqrt(a) * x + np.sqrt(1.0 - a) * self.anchor

    def reseed(self, rng: RngStream) -> "InterpDegradation":
        if self.kind != "noise":
            return self
        z = rng.generator().standard_normal(self.anchor.shape)
        return InterpDegradation(self.alphas, z, kind="noise")

    @classmethod
    def with_noise_anchor(cls, alphas: np.ndarray, shape: tuple[int, int, int],
                          rng: RngStream) -> "InterpDegradation":
        z = rng.generator().standard_normal(shape)
        return cls(alphas, z, kind="noise")


# ---------------------------------------------------------------------------
# exactly-linear test operator
# ---------------------------------------------------------------------------

@dataclass
class LinearDegradation(Degradation):
    """D(x, s) = x + s . e, exact in unclamped arithmetic.

    The first-order model of any smooth degradation near (x, 0); the
    improved sampler inverts it exactly for every restoration operator,
    which makes this the reference family for stability sweeps.
    """

    direction: np.ndarray
    total_steps: int
    family: str = field(default="linear_test", init=False)

    def __post_init__(self) -> None:
        self.direction = as_image(self.direction)
        if self.total_steps < 1:
            raise ValueError("linear schedule needs at least one step")

    def _apply(self, x: np.ndarray, t: int) -> np.ndarray:
        if x.shape != self.direction.shape:
            raise ValueError("direction shape does not match image")
        return x + t * self.direction
