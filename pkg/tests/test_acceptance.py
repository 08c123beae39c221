"""Acceptance gate: one test per release criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
lines.  The desk-scale pipeline (criteria 6 and 7) trains a small restorer
once per session; it uses real MNIST when $COLDDIFF_CACHE provides it and
falls back to the procedural digit stand-in otherwise.
"""

import struct
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from colddiff.convnet import ConvRestorer, load_checkpoint, save_checkpoint
from colddiff.core import RngStream, clamp_unit
from colddiff.data import (
    load_image,
    load_mnist_idx,
    load_cifar_bin,
    save_image_grid,
    synthetic_digits,
)
from colddiff.degrade import (
    BlurDegradation,
    InterpDegradation,
    LinearDegradation,
    blur_sigmas,
    cosine_alphas,
)
from colddiff.generate import (
    ChannelMeanPrior,
    GaussianMixture,
    fit_channel_mean_gmm,
    fit_gmm,
    generate,
)
from colddiff.metrics import frechet_proxy, rmse, ssim
from colddiff.presets import build_preset
from colddiff.restore import (
    ConstantRestorer,
    GroundTruthOracle,
    PerturbedOracle,
    SeededRandomRestorer,
)
from colddiff.sample import cold_sample, estimated_noise, naive_sample
from colddiff.snow import threshold_cut
from colddiff.training import EmaState, gradient_check, hyper_preset, train_restorer

torch.set_num_threads(2)

GOLDEN_SNOW = Path(__file__).parent / "golden" / "snow_cifar10_seed42_t120.npz"


def _report(number: int, name: str, elapsed: float, budget: float) -> None:
    print(f"\n[criterion {number:2d}] {name}: PASS ({elapsed:.1f}s, budget {budget:.0f}s)")
    assert elapsed < budget, f"criterion {number} exceeded its runtime budget"


# ---------------------------------------------------------------------------
# criterion 1: linear-degradation exactness and the naive-sampler contrast
# ---------------------------------------------------------------------------

def test_criterion_1_linear_exactness():
    start = time.perf_counter()
    rng = RngStream(101)
    eps_grid = (0.1, 1.0, 10.0)

    worst_improved = 0.0
    worst_contrast = np.inf
    for pair in range(100):
        gen = rng.child(pair).generator()
        x0 = gen.random((16, 16, 1))
        e = gen.standard_normal((16, 16, 1))
        op = LinearDegradation(e, 64)
        x_t = op(x0, 64)

        restorers = [
            GroundTruthOracle(x0),
            ConstantRestorer(0.0),
            SeededRandomRestorer(rng.child(10_000 + pair)),
        ] + [PerturbedOracle(GroundTruthOracle(x0), eps) for eps in eps_grid]
        for model in restorers:
            drift = cold_sample(x_t, 64, model, op, ground_truth=x0).drift
            worst_improved = max(worst_improved, max(drift))

        for eps in eps_grid:
            model = PerturbedOracle(GroundTruthOracle(x0), eps)
            final = naive_sample(x_t, 64, model, op).final
            worst_contrast = min(worst_contrast, np.abs(final - x0).max() / eps)

    assert worst_improved < 1e-9, f"improved sampler drifted {worst_improved:.2e}"
    assert worst_contrast >= 0.99, f"naive sampler retained only {worst_contrast:.3f} of eps"
    _report(1, "linear-degradation exactness", time.perf_counter() - start, 10)


# ---------------------------------------------------------------------------
# criterion 2: estimated-noise sampler equals its closed form
# ---------------------------------------------------------------------------

def test_criterion_2_estimated_noise_identity():
    start = time.perf_counter()
    gen = RngStream(102).generator()
    alphas = cosine_alphas(50)
    worst = 0.0
    for _ in range(1000):
        t = int(gen.integers(1, 51))
        x_t = gen.random((8, 8, 1))
        x_hat = gen.random((8, 8, 1))
        z_hat = estimated_noise(x_t, t, x_hat, alphas)
        closed = np.sqrt(alphas[t - 1]) * x_hat + np.sqrt(1 - alphas[t - 1]) * z_hat
        interp = InterpDegradation(alphas, z_hat)
        generic = x_t - interp(x_hat, t) + interp(x_hat, t - 1)
        worst = max(worst, float(np.abs(closed - generic).max()))
    assert worst < 1e-6, f"closed form and generic update differ by {worst:.2e}"
    _report(2, "estimated-noise closed-form identity", time.perf_counter() - start, 5)


# ---------------------------------------------------------------------------
# criterion 3: the identity contract at severity zero, all families
# ---------------------------------------------------------------------------

def test_criterion_3_identity_contract():
    start = time.perf_counter()
    rng = RngStream(103)
    shapes = {
        "blur/mnist": (28, 28, 1),
        "mask/cifar10": (32, 32, 3),
        "downsample/cifar10": (32, 32, 3),
        "snow/cifar10": (32, 32, 3),
        "desaturate/cifar10": (32, 32, 3),
        "noise/cosine-50": (16, 16, 1),
        "donor/cosine-50": (16, 16, 3),
        "linear/stability-64": (16, 16, 1),
    }
    for name, shape in shapes.items():
        donor = rng.child(1).generator().random(shape)
        deg = build_preset(name, shape, rng.child(2), donor=donor)
        gen = rng.child(3).generator()
        for _ in range(50):
            x = gen.random(shape)
            assert np.array_equal(deg(x, 0), x), f"{name} broke D(x, 0) = x"
    _report(3, "D(x, 0) = x across all 8 families", time.perf_counter() - start, 10)


# ---------------------------------------------------------------------------
# criterion 4: blur semigroup and the band-pass increment
# ---------------------------------------------------------------------------

def test_criterion_4_blur_semigroup_and_band_pass():
    start = time.perf_counter()
    gen = RngStream(104).generator()

    # composed-kernel fast path against the sequential reference, interior
    x = gen.random((48, 48, 1))
    blur = BlurDegradation(5, tuple(blur_sigmas(8, "linear", slope=0.1, intercept=0.4)))
    for t in (2, 5, 8):
        margin = t * (blur.kernel_size - 1) // 2 + 1
        seq = blur(x, t)[margin:-margin, margin:-margin]
        fast = blur.apply_composed(x, t)[margin:-margin, margin:-margin]
        assert np.abs(seq - fast).max() < 1e-6, f"fast path diverged at t={t}"

    # published schedule at shallow depth on a larger frame
    x_large = gen.random((64, 64, 1))
    mnist_blur = BlurDegradation(11, (7.0,) * 3)
    seq = mnist_blur(x_large, 3)[16:-16, 16:-16]
    fast = mnist_blur.apply_composed(x_large, 3)[16:-16, 16:-16]
    assert np.abs(seq - fast).max() < 1e-6

    # per-step improved-sampler increment is a difference of Gaussians:
    # its zero-frequency component vanishes relative to its energy
    mnist_full = BlurDegradation(11, (7.0,) * 40)
    x_hat = gen.random((28, 28, 1))
    for s in (1, 10, 25, 40):
        increment = mnist_full(x_hat, s - 1) - mnist_full(x_hat, s)
        spectrum = np.fft.fft2(increment[:, :, 0])
        ratio = abs(spectrum[0, 0]) / np.sqrt(np.sum(np.abs(spectrum) ** 2))
        assert ratio < 1e-6, f"DC leakage {ratio:.2e} at s={s}"
    _report(4, "blur semigroup + band-pass increment", time.perf_counter() - start, 30)


# ---------------------------------------------------------------------------
# criterion 5: analytic gradients against finite differences
# ---------------------------------------------------------------------------

def test_criterion_5_gradient_check():
    start = time.perf_counter()
    torch.manual_seed(105)
    model = ConvRestorer(in_channels=1, base_channels=(3, 4, 5), time_dim=8)
    assert model.parameter_count < 5000
    x = np.random.default_rng(105).random((2, 8, 8, 1))
    err = gradient_check(model, x, 3, h=1e-4)
    assert err < 1e-4, f"max relative gradient error {err:.2e}"
    _report(5, "gradient check vs finite differences", time.perf_counter() - start, 60)


# ---------------------------------------------------------------------------
# criteria 6 and 7 share one desk-scale training run
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def desk_pipeline():
    rng = RngStream(2024)
    cache = Path(__import__("os").environ.get("COLDDIFF_CACHE", "data"))
    mnist_train = cache / "mnist" / "train-images-idx3-ubyte"
    mnist_test = cache / "mnist" / "t10k-images-idx3-ubyte"
    if mnist_train.exists() and mnist_test.exists():
        source = "mnist"
        train = load_mnist_idx(mnist_train).images[:1024]
        test = load_mnist_idx(mnist_test, split="test").images[:256]
    else:
        source = "synthetic digits (no MNIST under $COLDDIFF_CACHE)"
        train = synthetic_digits(1024, rng.child(0)).images
        test = synthetic_digits(256, rng.child(1)).images

    blur = build_preset("blur/mnist", (28, 28, 1), rng.child(2))
    config = hyper_preset("desk", steps=4000)
    t0 = time.perf_counter()
    result = train_restorer(train, blur, config, rng.child(3))
    train_time = time.perf_counter() - t0
    print(f"\n[desk pipeline] trained 4000 steps on {source} in {train_time:.0f}s "
          f"(final l1 ~ {np.mean(result.loss_history[-100:]):.4f})")
    return {
        "rng": rng,
        "train": train,
        "test": test,
        "blur": blur,
        "model": result.ema_model(),
        "train_time": train_time,
    }


def test_criterion_6_desk_scale_deblurring(desk_pipeline):
    start = time.perf_counter()
    blur = desk_pipeline["blur"]
    model = desk_pipeline["model"]
    test = desk_pipeline["test"]
    total = blur.total_steps

    degraded, sampled = [], []
    for img in test:
        x_t = blur(img, total)
        degraded.append(x_t)
        sampled.append(clamp_unit(cold_sample(x_t, total, model, blur).final))

    deg_rmse = float(np.mean([rmse(d, c) for d, c in zip(degraded, test)]))
    smp_rmse = float(np.mean([rmse(s, c) for s, c in zip(sampled, test)]))
    deg_ssim = float(np.mean([ssim(d, c) for d, c in zip(degraded, test)]))
    smp_ssim = float(np.mean([ssim(s, c) for s, c in zip(sampled, test)]))
    deg_proxy = frechet_proxy(degraded, list(test))
    smp_proxy = frechet_proxy(sampled, list(test))

    print(f"\n[criterion  6] rmse degraded {deg_rmse:.4f} vs sampled {smp_rmse:.4f}")
    print(f"[criterion  6] ssim degraded {deg_ssim:.4f} vs sampled {smp_ssim:.4f}")
    print(f"[criterion  6] proxy degraded {deg_proxy:.4f} vs sampled {smp_proxy:.4f}")
    assert smp_rmse < deg_rmse, "sampled reconstruction did not beat degraded RMSE"
    assert smp_ssim > deg_ssim, "sampled reconstruction did not beat degraded SSIM"
    assert smp_proxy < deg_proxy, "sampled set is not distributionally closer than degraded"

    elapsed = desk_pipeline["train_time"] + (time.perf_counter() - start)
    _report(6, "desk-scale deblurring beats its degradation", elapsed, 45 * 60)


def test_criterion_7_generation_symmetry(desk_pipeline):
    start = time.perf_counter()
    rng = desk_pipeline["rng"]
    blur = desk_pipeline["blur"]
    model = desk_pipeline["model"]
    train = desk_pipeline["train"]
    test = desk_pipeline["test"]

    # sigma = 0 with a zero-covariance prior: a fully symmetric pipeline
    frozen = GaussianMixture(np.array([1.0]), np.array([[float(train.mean())]]),
                             np.zeros((1, 1, 1)))
    frozen_prior = ChannelMeanPrior(frozen, (28, 28, 1))
    identical = generate(frozen_prior, blur, model, 3, rng.child(50), sigma=0.0)
    assert np.array_equal(identical[0], identical[1])
    assert np.array_equal(identical[1], identical[2])

    # sigma = 0.002 restores diversity and beats the raw prior distribution
    gmm, _ = fit_channel_mean_gmm(train, 1, rng.child(51))
    prior = ChannelMeanPrior(gmm, (28, 28, 1))
    samples = generate(prior, blur, model, 64, rng.child(52), sigma=0.002)
    fingerprints = {s.tobytes() for s in samples}
    assert len(fingerprints) == len(samples), "generated images are not pairwise distinct"

    generated = [clamp_unit(s) for s in samples]
    prior_only = [clamp_unit(prior.sample(rng.child(1000 + i))) for i in range(64)]
    gen_proxy = frechet_proxy(generated, list(test))
    prior_proxy = frechet_proxy(prior_only, list(test))
    print(f"\n[criterion  7] proxy generated {gen_proxy:.4f} vs prior {prior_proxy:.4f}")
    assert gen_proxy < prior_proxy, "generation did not improve on the raw prior"
    _report(7, "generation symmetry breaking", time.perf_counter() - start, 10 * 60)


# ---------------------------------------------------------------------------
# criterion 8: EM against the closed-form single-Gaussian oracle
# ---------------------------------------------------------------------------

def test_criterion_8_gmm_oracle_equivalence():
    start = time.perf_counter()
    rng = RngStream(108)
    points = rng.child(0).generator().random((300, 3))
    gmm, history = fit_gmm(points, 1, rng.child(1))
    np.testing.assert_allclose(gmm.means[0], points.mean(axis=0), atol=1e-10)
    np.testing.assert_allclose(
        gmm.covariances[0], np.cov(points, rowvar=False, ddof=0), atol=1e-10
    )

    gen = rng.child(2).generator()
    mixture = np.vstack([
        gen.normal(0.25, 0.04, size=(120, 3)),
        gen.normal(0.75, 0.06, size=(120, 3)),
    ])
    _, history2 = fit_gmm(mixture, 2, rng.child(3))
    assert np.all(np.diff(history2) >= -1e-10), "EM log-likelihood decreased"
    _report(8, "K=1 EM matches the closed form", time.perf_counter() - start, 5)


# ---------------------------------------------------------------------------
# criterion 9: binary format round-trips
# ---------------------------------------------------------------------------

def test_criterion_9_format_round_trips(tmp_path):
    start = time.perf_counter()

    # IDX byte-exact
    pixels = np.array([[[0, 128], [255, 0]]], dtype=np.uint8)
    idx = tmp_path / "fixture.idx"
    idx.write_bytes(struct.pack(">IIII", 0x00000803, 1, 2, 2) + pixels.tobytes())
    ds = load_mnist_idx(idx)
    np.testing.assert_array_equal(ds[0][:, :, 0] * 255, pixels[0].astype(np.float64))

    # CIFAR byte-exact
    planes = np.random.default_rng(109).integers(0, 256, size=(3, 32, 32), dtype=np.uint8)
    cifar = tmp_path / "batch.bin"
    cifar.write_bytes(bytes([3]) + planes.tobytes())
    cds = load_cifar_bin(cifar)
    np.testing.assert_array_equal(
        (cds[0] * 255).astype(np.uint8), planes.transpose(1, 2, 0)
    )

    # checkpoint save/load reproduces inference bitwise
    torch.manual_seed(109)
    model = ConvRestorer(in_channels=1, base_channels=(3, 4, 5), time_dim=8, max_step=9)
    ema = EmaState(model, decay=0.7)
    with torch.no_grad():
        for p in model.parameters():
            p.mul_(1.25)
    ema.update(model)
    ckpt = tmp_path / "model.cdck"
    save_checkpoint(ckpt, model, ema.shadow, preset="blur/mnist", seed=1)
    live, shadow, _ = load_checkpoint(ckpt)
    probe = np.random.default_rng(9).random((16, 16, 1))
    np.testing.assert_array_equal(live.restore(probe, 4), model.restore(probe, 4))
    np.testing.assert_array_equal(
        shadow.restore(probe, 4), ema.build_model(model).restore(probe, 4)
    )

    # image grid round trip within one quantization level
    img = np.random.default_rng(10).random((12, 12, 3))
    grid = tmp_path / "grid.png"
    save_image_grid([img], 1, grid)
    assert np.abs(load_image(grid) - img).max() <= 1 / 255
    _report(9, "IDX/CIFAR/checkpoint/grid round-trips", time.perf_counter() - start, 5)


# ---------------------------------------------------------------------------
# criterion 10: snow determinism against the committed golden file
# ---------------------------------------------------------------------------

def test_criterion_10_snow_determinism():
    start = time.perf_counter()
    data = np.load(GOLDEN_SNOW)
    snow = build_preset("snow/cifar10", (32, 32, 3), RngStream(42))
    out = snow(np.asarray(data["probe"]), 120)
    assert np.array_equal(out, data["output"]), "snow output diverged from its golden file"

    # the appendix threshold rule on hand-built matrices
    m = np.array([[0.1, 0.5, 0.9], [1.2, -0.3, 0.51]])
    np.testing.assert_array_equal(
        threshold_cut(m, 0.5), [[0.0, 0.0, 0.9], [1.2, 0.0, 0.51]]
    )
    assert threshold_cut(np.array(0.3), 0.5) == 0.0
    _report(10, "snow golden file + threshold rule", time.perf_counter() - start, 5)
