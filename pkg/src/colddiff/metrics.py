"""Reconstruction metrics and a distribution-distance proxy.

- `rmse`: root of the mean squared elementwise difference.
- `ssim`: mean local structural similarity with the standard protocol
  (11x11 Gaussian window, sigma 1.5, stabilizers C1 = 0.01^2 and
  C2 = 0.03^2 on the unit dynamic range); multichannel inputs are
  channel-averaged first, local statistics use reflect boundary handling.
- `frechet_proxy`: the Frechet distance between Gaussian fits of cheap
  image features.  This is an honestly-labeled stand-in for FID: the
  default extractor is a fixed random projection of 8x8 thumbnails, and
  `save_features` / `load_features` let callers plug in features computed
  offline by a real pretrained network instead.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi

from .core import as_image
from .degrade import gaussian_kernel

__all__ = [
    "rmse",
    "ssim",
    "default_feature_extractor",
    "frechet_proxy",
    "frechet_from_features",
    "save_features",
    "load_features",
    "MetricReport",
    "compare_sets",
]

_FEATURE_MAGIC = b"CDFT"
_FEATURE_VERSION = 1
_PROJECTION_SEED = 0x0C01DD1F  # fixed so proxy values are comparable across runs
_FEATURE_DIM = 64
_THUMB = 8


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    """Root mean squared elementwise difference."""
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM on the unit dynamic range.

    Local means/variances/covariance come from a Gaussian-weighted window;
    RGB inputs are reduced to their channel average first.
    """
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    x = a.mean(axis=2)
    y = b.mean(axis=2)

    w = gaussian_kernel(window, sigma)
    blur = lambda img: ndi.correlate(img, w, mode="reflect")  # noqa: E731

    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x * mu_x
    var_y = blur(y * y) - mu_y * mu_y
    cov = blur(x * y) - mu_x * mu_y

    c1, c2 = k1 * k1, k2 * k2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# Frechet proxy
# ---------------------------------------------------------------------------

def _thumbnail(img: np.ndarray, size: int = _THUMB) -> np.ndarray:
    """Tile-mean the image down to size x size per channel."""
    img = as_image(img)
    if img.shape[0] < size or img.shape[1] < size:
        raise ValueError(f"image smaller than {size}x{size} thumbnail")
    rows = np.array_split(img, size, axis=0)
    return np.stack([
        np.stack([blk.mean(axis=(0, 1)) for blk in np.array_split(r, size, axis=1)])
        for r in rows
    ])


def default_feature_extractor(images) -> np.ndarray:
    """Fixed-seed random projection of 8x8 thumbnails to 64-dim features."""
    thumbs = np.stack([_thumbnail(img).reshape(-1) for img in images])
    d = thumbs.shape[1]
    gen = np.random.Generator(np.random.Philox(key=_PROJECTION_SEED))
    projection = gen.standard_normal((d, _FEATURE_DIM)) / np.sqrt(d)
    return thumbs @ projection


def _gaussian_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = features.mean(axis=0)
    cov = np.cov(features, rowvar=False)
    return mu, np.atleast_2d(cov)


def _sqrt_trace_of_product(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    """tr((A B)^{1/2}) via eigendecompositions, eigenvalues floored at zero.

    Evaluated as the nuclear norm of A^{1/2} B^{1/2}: the singular values of
    that product are the square roots of eig(A^{1/2} B A^{1/2}), and taking
    them from an SVD avoids the precision loss of squaring near-singular
    covariances.  Numerically indefinite inputs are regularized by +1e-6 I.
    """
    def psd_sqrt(mat):
        sym = 0.5 * (mat + mat.T)
        vals, vecs = np.linalg.eigh(sym)
        if vals.min() < -1e-8:
            vals, vecs = np.linalg.eigh(sym + 1e-6 * np.eye(mat.shape[0]))
        return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T

    cross = psd_sqrt(cov_a) @ psd_sqrt(cov_b)
    return float(np.linalg.svd(cross, compute_uv=False).sum())


def frechet_from_features(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets."""
    if len(features_a) < 2 or len(features_b) < 2:
        raise ValueError("need at least 2 samples per set to fit Gaussians")
    mu_a, cov_a = _gaussian_stats(np.asarray(features_a, dtype=np.float64))
    mu_b, cov_b = _gaussian_stats(np.asarray(features_b, dtype=np.float64))
    mean_term = float(np.sum((mu_a - mu_b) ** 2))
    trace_term = float(np.trace(cov_a) + np.trace(cov_b)) - 2.0 * _sqrt_trace_of_product(cov_a, cov_b)
    return mean_term + trace_term


def frechet_proxy(set_a, set_b, extractor=None) -> float:
    """Distribution distance between two image sets via `extractor` features."""
    extract = extractor if extractor is not None else default_feature_extractor
    return frechet_from_features(extract(set_a), extract(set_b))


def save_features(path, features: np.ndarray, protocol: str = "") -> None:
    """Feature file: magic, version, row/col counts, protocol tag, f32 matrix."""
    features = np.asarray(features, dtype="<f4")
    tag = protocol.encode("utf-8")
    with open(path, "wb") as f:
        f.write(_FEATURE_MAGIC)
        f.write(struct.pack("<III", _FEATURE_VERSION, *features.shape))
        f.write(struct.pack("<I", len(tag)))
        f.write(tag)
        f.write(features.tobytes())


def load_features(path) -> tuple[np.ndarray, str]:
    raw = Path(path).read_bytes()
    if raw[:4] != _FEATURE_MAGIC:
        raise ValueError(f"not a feature file (bad magic {raw[:4]!r})")
    version, n, d = struct.unpack("<III", raw[4:16])
    if version != _FEATURE_VERSION:
        raise ValueError(f"unsupported feature file version {version}")
    tag_len = struct.unpack("<I", raw[16:20])[0]
    tag = raw[20:20 + tag_len].decode("utf-8")
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=20 + tag_len)
    return feats.reshape(n, d).astype(np.float64), tag


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    """Per-image reconstruction metrics plus optional distribution proxy."""

    rmse_values: list[float]
    ssim_values: list[float]
    proxy: float | None = None
    proxy_protocol: str = ""
    notes: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.rmse_values)

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self.rmse_values)) if self.rmse_values else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values)) if self.ssim_values else float("nan")

    def render_text(self) -> str:
        lines = [f"{'metric':<12}{'mean':>12}{'count':>8}"]
        lines.append(f"{'rmse':<12}{self.mean_rmse:>12.6f}{self.count:>8}")
        lines.append(f"{'ssim':<12}{self.mean_ssim:>12.6f}{self.count:>8}")
        if self.proxy is not None:
            lines.append(f"{'proxy':<12}{self.proxy:>12.6f}{self.count:>8}")
            if self.proxy_protocol:
                lines.append(f"proxy protocol: {self.proxy_protocol}")
        return "\n".join(lines)

    def to_jsonl(self) -> str:
        records = [
            {"index": i, "rmse": r, "ssim": s}
            for i, (r, s) in enumerate(zip(self.rmse_values, self.ssim_values))
        ]
        summary = {"mean_rmse": self.mean_rmse, "mean_ssim": self.mean_ssim,
                   "count": self.count}
        if self.proxy is not None:
            summary["proxy"] = self.proxy
            summary["proxy_protocol"] = self.proxy_protocol
        records.append(summary)
        return "\n".join(json.dumps(r) for r in records)


def compare_sets(reconstructed, reference, distribution_reference=None) -> MetricReport:
    """Pairwise rmse/ssim of two aligned sets, plus the proxy against a
    held-out reference set when one is supplied.
    """
    if len(reconstructed) != len(reference):
        raise ValueError("paired metric sets must have equal lengths")
    rmse_values = [rmse(a, b) for a, b in zip(reconstructed, reference)]
    ssim_values = [ssim(a, b) for a, b in zip(reconstructed, reference)]
    proxy = None
    protocol = ""
    if distribution_reference is not None:
        proxy = frechet_proxy(reconstructed, distribution_reference)
        protocol = (f"gaussian-frechet, random-projection {_FEATURE_DIM}-dim of "
                    f"{_THUMB}x{_THUMB} thumbnails, seed {_PROJECTION_SEED:#x}")
    return MetricReport(rmse_values, ssim_values, proxy, protocol)
