"""Unconditional generation from simple priors over fully-degraded images.

Heavily blurred images collapse to constant planes whose per-channel values
are the channel means of the clean image, so the distribution of endpoints
is modeled by a Gaussian mixture over those C-vectors (fit by EM below).
Sampling a prior endpoint, breaking the perfect pixel correlation with a
tiny Gaussian perturbation, and running the improved sampler from t = T
yields a new image.  Alternative endpoint priors cover the other operator
families: a uniform solid color, a Gaussian over 2x2 thumbnails, and a
donor-image bank.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .core import RngStream, as_image, channel_means
from .degrade import Degradation
from .sample import cold_sample

__all__ = [
    "GaussianMixture",
    "fit_gmm",
    "fit_channel_mean_gmm",
    "responsibilities",
    "PriorModel",
    "ChannelMeanPrior",
    "SolidColorPrior",
    "LowResGaussianPrior",
    "DonorPrior",
    "break_symmetry",
    "generate",
    "save_prior",
    "load_prior",
]

_COV_REG = 1e-6
PRIOR_MAGIC = b"CDPR"
PRIOR_VERSION = 1


# ---------------------------------------------------------------------------
# Gaussian mixture with EM fitting
# ---------------------------------------------------------------------------

@dataclass
class GaussianMixture:
    """Mixture weights, means (K, d) and full covariances (K, d, d)."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        k = self.weights.shape[0]
        if self.means.shape[0] != k or self.covariances.shape[0] != k:
            raise ValueError("component counts disagree across weights/means/covariances")
        if not np.isclose(self.weights.sum(), 1.0, atol=1e-9):
            raise ValueError(f"weights must sum to 1, got {self.weights.sum()}")
        if not np.allclose(self.covariances, np.swapaxes(self.covariances, 1, 2)):
            raise ValueError("covariances must be symmetric")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, gen: np.random.Generator) -> np.ndarray:
        k = int(gen.choice(self.n_components, p=self.weights))
        return gen.multivariate_normal(self.means[k], self.covariances[k], method="eigh")


def _log_gaussian(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = mean.shape[0]
    chol = np.linalg.cholesky(cov)
    diff = points - mean
    y = solve_triangular(chol, diff.T, lower=True)
    maha = np.sum(y * y, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * np.log(2.0 * np.pi) + logdet + maha)


def _ensure_pd(cov: np.ndarray) -> np.ndarray:
    """Regularize a covariance that is not positive definite by +1e-6 I."""
    cov = 0.5 * (cov + cov.T)
    try:
        np.linalg.cholesky(cov)
        return cov
    except np.linalg.LinAlgError:
        return cov + _COV_REG * np.eye(cov.shape[0])


def _log_joint(points: np.ndarray, gmm: GaussianMixture) -> np.ndarray:
    logp = np.empty((points.shape[0], gmm.n_components))
    for k in range(gmm.n_components):
        logp[:, k] = np.log(gmm.weights[k]) + _log_gaussian(points, gmm.means[k], gmm.covariances[k])
    return logp


def responsibilities(points: np.ndarray, gmm: GaussianMixture) -> np.ndarray:
    """Posterior component probabilities per point; rows sum to 1."""
    logp = _log_joint(points, gmm)
    return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))


def _kmeanspp_centers(points: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [points[int(gen.integers(0, n))]]
    for _ in range(k - 1):
        d2 = np.min(
            [np.sum((points - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(points[int(gen.integers(0, n))])
            continue
        centers.append(points[int(gen.choice(n, p=d2 / total))])
    return np.stack(centers)


def _em_run(points: np.ndarray, k: int, gen: np.random.Generator,
            tol: float, max_iter: int) -> tuple[GaussianMixture, list[float]]:
    n, d = points.shape
    means = _kmeanspp_centers(points, k, gen)
    base_cov = _ensure_pd(np.cov(points, rowvar=False, ddof=0).reshape(d, d))
    covs = np.stack([base_cov.copy() for _ in range(k)])
    weights = np.full(k, 1.0 / k)
    gmm = GaussianMixture(weights, means, covs)

    history: list[float] = []
    for _ in range(max_iter):
        logp = _log_joint(points, gmm)
        norm = logsumexp(logp, axis=1)
        history.append(float(norm.sum()))
        gamma = np.exp(logp - norm[:, None])

        nk = gamma.sum(axis=0)
        weights = nk / n
        means = (gamma.T @ points) / nk[:, None]
        covs = np.empty((k, d, d))
        for j in range(k):
            diff = points - means[j]
            covs[j] = _ensure_pd((gamma[:, j][:, None] * diff).T @ diff / nk[j])
        gmm = GaussianMixture(weights, means, covs)

        if len(history) >= 2 and abs(history[-1] - history[-2]) < tol:
            break
    return gmm, history


def fit_gmm(points: np.ndarray, k: int, rng: RngStream, tol: float = 1e-8,
            max_iter: int = 500, restarts: int = 5) -> tuple[GaussianMixture, list[float]]:
    """EM fit of a K-component mixture on (N, d) points.

    k-means++ seeding, `restarts` independent runs, best final likelihood
    kept.  Covariances are maximum-likelihood (divide by the soft counts);
    non-positive-definite updates are regularized by +1e-6 I.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("points must be a nonempty (N, d) array")
    if k < 1:
        raise ValueError("component count must be at least 1")
    if k > points.shape[0]:
        raise ValueError(f"cannot fit {k} components on {points.shape[0]} points")

    best: tuple[GaussianMixture, list[float]] | None = None
    for r in range(max(1, restarts)):
        gmm, history = _em_run(points, k, rng.child(r).generator(), tol, max_iter)
        if best is None or history[-1] > best[1][-1]:
            best = (gmm, history)
    return best


def fit_channel_mean_gmm(images: np.ndarray, k: int, rng: RngStream,
                         **kwargs) -> tuple[GaussianMixture, list[float]]:
    """Fit the endpoint prior: a GMM over per-image channel means."""
    points = np.stack([channel_means(as_image(img)) for img in images])
    return fit_gmm(points, k, rng, **kwargs)


# ---------------------------------------------------------------------------
# endpoint priors
# ---------------------------------------------------------------------------

@runtime_checkable
class PriorModel(Protocol):
    """Sampler over fully-degraded endpoint images x_T."""

    shape: tuple[int, int, int]

    def sample(self, rng: RngStream) -> np.ndarray: ...


@dataclass
class ChannelMeanPrior:
    """Draw a channel-mean vector from a GMM, broadcast to constant planes."""

    gmm: GaussianMixture
    shape: tuple[int, int, int]

    def __post_init__(self) -> None:
        if self.gmm.dim != self.shape[2]:
            raise ValueError("mixture dimension must equal the channel count")

    def sample(self, rng: RngStream) -> np.ndarray:
        vec = self.gmm.sample(rng.generator())
        return np.ones(self.shape) * vec[None, None, :]


@dataclass
class SolidColorPrior:
    """Constant image of a color drawn uniformly in [0, 1]^C (or fixed)."""

    shape: tuple[int, int, int]
    color: np.ndarray | None = None

    def sample(self, rng: RngStream) -> np.ndarray:
        color = self.color
        if color is None:
            color = rng.generator().uniform(0.0, 1.0, size=self.shape[2])
        return np.ones(self.shape) * np.asarray(color, dtype=np.float64)[None, None, :]


def _tile_means(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    rows = np.array_split(img, out_h, axis=0)
    return np.stack([
        np.stack([block.mean(axis=(0, 1)) for block in np.array_split(r, out_w, axis=1)])
        for r in rows
    ])


@dataclass
class LowResGaussianPrior:
    """Gaussian over 2x2 thumbnails, nearest-neighbor upsampled on sampling."""

    mean: np.ndarray
    covariance: np.ndarray
    shape: tuple[int, int, int]

    @classmethod
    def fit(cls, images: np.ndarray, shape: tuple[int, int, int] | None = None) -> "LowResGaussianPrior":
        images = [as_image(img) for img in images]
        if not images:
            raise ValueError("cannot fit a prior on zero images")
        if shape is None:
            shape = images[0].shape
        vecs = np.stack([_tile_means(img, 2, 2).reshape(-1) for img in images])
        mean = vecs.mean(axis=0)
        cov = np.cov(vecs, rowvar=False, ddof=0).reshape(mean.size, mean.size)
        return cls(mean, cov, shape)

    def sample(self, rng: RngStream) -> np.ndarray:
        h, w, c = self.shape
        if h % 2 or w % 2:
            raise ValueError("upsampling a 2x2 thumbnail needs even image sides")
        vec = rng.generator().multivariate_normal(self.mean, self.covariance, method="eigh")
        small = vec.reshape(2, 2, c)
        return np.repeat(np.repeat(small, h // 2, axis=0), w // 2, axis=1)


class DonorPrior:
    """Draw endpoint images from a donor bank, without replacement per pass."""

    def __init__(self, images: np.ndarray):
        self.images = [as_image(img) for img in images]
        if not self.images:
            raise ValueError("donor bank is empty")
        self.shape = self.images[0].shape
        self._queue: list[int] = []

    def sample(self, rng: RngStream) -> np.ndarray:
        if not self._queue:
            self._queue = list(rng.generator().permutation(len(self.images)))
        return self.images[self._queue.pop(0)].copy()


def break_symmetry(x: np.ndarray, sigma: float, rng: RngStream) -> np.ndarray:
    """Add i.i.d. Gaussian noise of standard deviation sigma to every element.

    Restores pixel diversity in constant-plane prior samples; sigma = 0 is
    the exact identity.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    x = as_image(x)
    if sigma == 0.0:
        return x.copy()
    return x + sigma * rng.generator().standard_normal(x.shape)


def generate(prior: PriorModel, degradation: Degradation, model, n: int,
             rng: RngStream, sigma: float = 0.002) -> list[np.ndarray]:
    """Sample n images: prior endpoint, symmetry break, improved sampling
    from t = T.  Returns the final iterates unclamped.
    """
    if n < 0:
        raise ValueError("sample count must be nonnegative")
    finals = []
    total = degradation.total_steps
    for i in range(n):
        child = rng.child(i)
        x_end = prior.sample(child.child(0))
        x_end = break_symmetry(x_end, sigma, child.child(1))
        finals.append(cold_sample(x_end, total, model, degradation).final)
    return finals


# ---------------------------------------------------------------------------
# prior persistence: magic, version, K, dim, then weights/means/covariances
# as little-endian float64 blobs
# ---------------------------------------------------------------------------

def save_prior(path, gmm: GaussianMixture) -> None:
    with open(path, "wb") as f:
        f.write(PRIOR_MAGIC)
        f.write(struct.pack("<III", PRIOR_VERSION, gmm.n_components, gmm.dim))
        f.write(gmm.weights.astype("<f8").tobytes())
        f.write(gmm.means.astype("<f8").tobytes())
        f.write(gmm.covariances.astype("<f8").tobytes())


def load_prior(path) -> GaussianMixture:
    raw = Path(path).read_bytes()
    if raw[:4] != PRIOR_MAGIC:
        raise ValueError(f"not a prior file (bad magic {raw[:4]!r})")
    version, k, d = struct.unpack("<III", raw[4:16])
    if version != PRIOR_VERSION:
        raise ValueError(f"unsupported prior version {version}")
    offset = 16
    weights = np.frombuffer(raw, dtype="<f8", count=k, offset=offset); offset += 8 * k
    means = np.frombuffer(raw, dtype="<f8", count=k * d, offset=offset).reshape(k, d); offset += 8 * k * d
    covs = np.frombuffer(raw, dtype="<f8", count=k * d * d, offset=offset).reshape(k, d, d)
    return GaussianMixture(weights.copy(), means.copy(), covs.copy())
