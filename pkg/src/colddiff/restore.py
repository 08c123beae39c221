"""The restoration contract and its analytic implementations.

A restoration model maps a degraded image and its severity index back to an
estimate of the clean image: restore(x_t, t) ~= x_0, shape-preserving and
deterministic at inference.  The trainable network lives in
`colddiff.convnet`; this module provides the analytic models used to probe
the samplers:

- `LookupOracle`      exact inversion for registered (degraded, step) pairs
- `GroundTruthOracle` always returns a stored clean image (the idealized
                      perfect restorer for trajectory experiments)
- `LinearInverseOracle` closed-form inverse of the linear test operator
- `PerturbedOracle`   a perfect oracle plus a bounded error term
- `ConstantRestorer` / `SeededRandomRestorer`  pure-garbage baselines
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np

from .core import RngStream, as_image
from .degrade import LinearDegradation

__all__ = [
    "RestorationModel",
    "LookupOracle",
    "GroundTruthOracle",
    "LinearInverseOracle",
    "PerturbedOracle",
    "ConstantRestorer",
    "SeededRandomRestorer",
]


@runtime_checkable
class RestorationModel(Protocol):
    """Anything with a shape-preserving restore(x_t, t) -> x_0 estimate."""

    family: str
    parameter_count: int
    max_step: int | None

    def restore(self, x: np.ndarray, t: int) -> np.ndarray: ...


class LookupOracle:
    """Inverts registered degradations exactly.

    `register` stores every iterate D(x_0, s) for s = 0..T against x_0.
    Lookups hit on exact bytes first; near-misses (float round-off from a
    sampler's add/subtract cancellations) fall back to a tolerance scan.
    Unregistered inputs raise KeyError.
    """

    family = "oracle-lookup"
    parameter_count = 0
    max_step: int | None = None

    def __init__(self, atol: float = 1e-6):
        self.atol = atol
        self._exact: dict[tuple[int, bytes], np.ndarray] = {}
        self._by_step: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}

    def register(self, clean: np.ndarray, degradation, steps=None) -> None:
        clean = as_image(clean)
        if steps is None:
            steps = range(degradation.total_steps + 1)
        for s in steps:
            degraded = degradation(clean, s)
            self._exact[(s, degraded.tobytes())] = clean
            self._by_step.setdefault(s, []).append((degraded, clean))

    def restore(self, x: np.ndarray, t: int) -> np.ndarray:
        x = as_image(x)
        hit = self._exact.get((t, x.tobytes()))
        if hit is not None:
            return hit.copy()
        for degraded, clean in self._by_step.get(t, []):
            if degraded.shape == x.shape and np.allclose(degraded, x, atol=self.atol, rtol=0.0):
                return clean.copy()
        raise KeyError(f"no registered degraded image at step {t} within atol={self.atol}")


class GroundTruthOracle:
    """Returns the stored clean image for any input: the perfect restorer."""

    family = "oracle-truth"
    parameter_count = 0
    max_step: int | None = None

    def __init__(self, clean: np.ndarray):
        self.clean = as_image(clean)

    def restore(self, x: np.ndarray, t: int) -> np.ndarray:
        return self.clean.copy()


class LinearInverseOracle:
    """Closed-form inverse of D(x, s) = x + s * e: subtract s * e."""

    family = "oracle-linear"
    parameter_count = 0

    def __init__(self, op: LinearDegradation):
        self.op = op
        self.max_step = op.total_steps

    def restore(self, x: np.ndarray, t: int) -> np.ndarray:
        return as_image(x) - t * self.op.direction


class PerturbedOracle:
    """A perfect oracle plus an error of sup-norm at most `magnitude`.

    Modes:
      fixed_offset          add `magnitude` to every pixel (constant bias)
      seeded_random         add magnitude * Uniform(-1, 1), fresh per call,
                            drawn from a reproducible stream
      adversarial_constant  add magnitude * p for a random +-1 sign pattern
                            frozen at construction
    """

    family = "oracle-perturbed"
    parameter_count = 0
    max_step: int | None = None

    MODES = ("fixed_offset", "seeded_random", "adversarial_constant")

    def __init__(self, base: RestorationModel, magnitude: float,
                 mode: str = "fixed_offset", rng: RngStream | None = None):
        if magnitude < 0:
            raise ValueError("perturbation magnitude must be nonnegative")
        if mode not in self.MODES:
            raise ValueError(f"mode must be one of {self.MODES}, got {mode!r}")
        if mode != "fixed_offset" and rng is None:
            raise ValueError(f"mode {mode!r} needs an RngStream")
        self.base = base
        self.magnitude = float(magnitude)
        self.mode = mode
        self._gen = rng.generator() if rng is not None else None
        self._pattern: np.ndarray | None = None

    def restore(self, x: np.ndarray, t: int) -> np.ndarray:
        out = self.base.restore(x, t)
        if self.magnitude == 0.0:
            return out
        if self.mode == "fixed_offset":
            return out + self.magnitude
        if self.mode == "seeded_random":
            return out + self.magnitude * self._gen.uniform(-1.0, 1.0, size=out.shape)
        if self._pattern is None or self._pattern.shape != out.shape:
            self._pattern = np.sign(self._gen.uniform(-1.0, 1.0, size=out.shape))
        return out + self.magnitude * self._pattern


class ConstantRestorer:
    """Ignores its input entirely and returns a constant image."""

    family = "constant"
    parameter_count = 0
    max_step: int | None = None

    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def restore(self, x: np.ndarray, t: int) -> np.ndarray:
        return np.full_like(as_image(x), self.value)


class SeededRandomRestorer:
    """Returns a fresh uniform random image per call; reproducible stream."""

    family = "random"
    parameter_count = 0
    max_step: int | None = None

    def __init__(self, rng: RngStream, low: float = 0.0, high: float = 1.0):
        self._gen = rng.generator()
        self.low, self.high = float(low), float(high)

    def restore(self, x: np.ndarray, t: int) -> np.ndarray:
        return self._gen.uniform(self.low, self.high, size=as_image(x).shape)
