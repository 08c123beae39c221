"""Cold diffusion engine: deterministic degradations, restoration models,
the two inversion samplers, endpoint priors for generation, and the
evaluation/stability harness.
"""

from .core import RngStream, channel_means, clamp_unit
from .degrade import (
    BlurDegradation,
    Degradation,
    DesaturateDegradation,
    DownsampleDegradation,
    InterpDegradation,
    LinearDegradation,
    MaskDegradation,
    cosine_alphas,
    gaussian_kernel,
)
from .presets import build_degradation, build_preset, list_presets, preset_config
from .sample import Trajectory, cold_sample, cold_sample_estimated, estimated_noise, naive_sample
from .snow import SnowDegradation

__version__ = "0.1.0"

__all__ = [
    "RngStream",
    "channel_means",
    "clamp_unit",
    "Degradation",
    "BlurDegradation",
    "MaskDegradation",
    "DownsampleDegradation",
    "DesaturateDegradation",
    "InterpDegradation",
    "LinearDegradation",
    "SnowDegradation",
    "gaussian_kernel",
    "cosine_alphas",
    "build_degradation",
    "build_preset",
    "list_presets",
    "preset_config",
    "Trajectory",
    "naive_sample",
    "cold_sample",
    "estimated_noise",
    "cold_sample_estimated",
    "__version__",
]
