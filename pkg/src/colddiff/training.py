"""Restorer training: mean-absolute-error objective, EMA, gradient checks.

The loop minimizes E_x || R(D(x, t), t) - x ||_1 with an Adam optimizer:
each iteration draws a batch and one severity t uniform in {1..T}, degrades
the batch, and accumulates gradients; the optimizer steps every
`grad_accum` iterations and the EMA shadow updates every `ema_every`
optimizer steps.  Randomized degradation families are re-realized per batch
from child streams, mirroring per-batch reseeding of the corruption.

Everything is CPU-sized by design: desk-scale models train in minutes and
are bit-reproducible for a fixed `RngStream` in single-threaded mode.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .core import RngStream
from .convnet import ConvRestorer
from .degrade import Degradation

__all__ = [
    "TrainingDiverged",
    "l1_loss",
    "EmaState",
    "TrainConfig",
    "HYPER_PRESETS",
    "hyper_preset",
    "TrainResult",
    "train_restorer",
    "gradient_check",
]


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


def l1_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean absolute deviation over all elements of an image or batch."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.abs(pred - target).mean())


class EmaState:
    """Exponential moving average of model weights.

    One `update` applies shadow = decay * shadow + (1 - decay) * live.
    """

    def __init__(self, model: torch.nn.Module, decay: float = 0.995, update_period: int = 10):
        if not 0.0 <= decay <= 1.0:
            raise ValueError(f"decay must be in [0, 1], got {decay}")
        if update_period < 1:
            raise ValueError("update period must be positive")
        self.decay = float(decay)
        self.update_period = int(update_period)
        self.shadow = {k: v.detach().clone() for k, v in model.state_dict().items()}

    def update(self, model: torch.nn.Module) -> None:
        with torch.no_grad():
            for k, v in model.state_dict().items():
                self.shadow[k].mul_(self.decay).add_(v, alpha=1.0 - self.decay)

    def build_model(self, reference: torch.nn.Module) -> torch.nn.Module:
        """A deep copy of `reference` carrying the shadow weights."""
        model = copy.deepcopy(reference)
        model.load_state_dict(self.shadow)
        model.eval()
        return model


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int = 32
    lr: float = 2e-5
    grad_accum: int = 2
    ema_decay: float = 0.995
    ema_every: int = 10
    augment_flip: bool = False
    augment_crop: bool = False
    crop_pad: int = 4
    log_every: int = 0


# "published" mirrors the reference experiment settings (inpainting runs
# doubled the batch).  "desk" raises the learning rate and updates the EMA
# every optimizer step: at a few thousand steps the published 1-in-10
# cadence leaves the shadow dominated by its random initialization.
HYPER_PRESETS: dict[str, TrainConfig] = {
    "published": TrainConfig(steps=0, batch_size=32, lr=2e-5, grad_accum=2,
                             ema_decay=0.995, ema_every=10),
    "published-inpaint": TrainConfig(steps=0, batch_size=64, lr=2e-5, grad_accum=2,
                                     ema_decay=0.995, ema_every=10),
    "desk": TrainConfig(steps=0, batch_size=32, lr=1e-3, grad_accum=2,
                        ema_decay=0.995, ema_every=1),
}


def hyper_preset(name: str, steps: int, **overrides) -> TrainConfig:
    if name not in HYPER_PRESETS:
        raise KeyError(f"unknown hyper preset {name!r}; available: {sorted(HYPER_PRESETS)}")
    return replace(HYPER_PRESETS[name], steps=steps, **overrides)


@dataclass
class TrainResult:
    model: ConvRestorer
    ema: EmaState
    loss_history: list[float] = field(default_factory=list)
    torch_seed: int = 0

    def ema_model(self) -> ConvRestorer:
        return self.ema.build_model(self.model)


def _to_batch_tensor(batch: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2))).to(dtype)


def train_restorer(images: np.ndarray, degradation: Degradation, config: TrainConfig,
                   rng: RngStream, model: ConvRestorer | None = None) -> TrainResult:
    """Train a restorer to invert `degradation` on an (N, H, W, C) stack.

    Severity is drawn once per batch, uniform in {1..T}.  A non-finite loss
    aborts with a `TrainingDiverged` diagnostic.  With `config.steps == 0`
    the returned weights equal the (seeded) initialization.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError("training images must be a nonempty (N, H, W, C) stack")
    n, _, _, channels = images.shape

    torch_seed = int(rng.child(0).generator().integers(0, 2**62))
    torch.manual_seed(torch_seed)
    if model is None:
        model = ConvRestorer(in_channels=channels, max_step=degradation.total_steps)
    model.train()

    ema = EmaState(model, config.ema_decay, config.ema_every)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    gen = rng.child(1).generator()
    total = degradation.total_steps
    history: list[float] = []
    optimizer_steps = 0

    from .data import augment_batch  # local import; data pulls in PIL

    for it in range(config.steps):
        idx = gen.integers(0, n, size=config.batch_size)
        clean = images[idx]
        if config.augment_flip or config.augment_crop:
            clean = augment_batch(clean, gen, flip=config.augment_flip,
                                  crop=config.augment_crop, pad=config.crop_pad)
        t = int(gen.integers(1, total + 1))
        deg = degradation.reseed(rng.child(2 + it)) if degradation.randomized else degradation
        degraded = deg.apply_batch(clean, t)

        pred = model(_to_batch_tensor(degraded), t)
        target = _to_batch_tensor(clean)
        loss = (pred - target).abs().mean()
        value = float(loss.item())
        if not np.isfinite(value):
            raise TrainingDiverged(
                f"non-finite loss {value} at iteration {it} (t={t}, lr={config.lr})"
            )
        history.append(value)
        (loss / config.grad_accum).backward()

        if (it + 1) % config.grad_accum == 0:
            optimizer.step()
            optimizer.zero_grad(set_to_none=True)
            optimizer_steps += 1
            if optimizer_steps % config.ema_every == 0:
                ema.update(model)

        if config.log_every and (it + 1) % config.log_every == 0:
            window = history[-config.log_every:]
            print(f"step {it + 1:>6}/{config.steps}  l1 {np.mean(window):.4f}")

    model.eval()
    return TrainResult(model=model, ema=ema, loss_history=history, torch_seed=torch_seed)


def _smoothed_l1(pred: torch.Tensor, target: torch.Tensor, delta: float) -> torch.Tensor:
    # Huber with a tiny knee so the loss is differentiable at exact zeros;
    # indistinguishable from l1 for residuals above delta.
    r = pred - target
    quad = r * r / (2.0 * delta)
    lin = r.abs() - delta / 2.0
    return torch.where(r.abs() < delta, quad, lin).mean()


def gradient_check(model: ConvRestorer, x: np.ndarray, t: int,
                   target: np.ndarray | None = None, h: float = 1e-4,
                   delta: float = 1e-8) -> float:
    """Max relative error of autograd vs central finite differences.

    Runs in float64 on a deep copy of the model.  The loss is the smoothed
    l1 against `target` (default: the model's own output shifted by a fixed
    +-0.5 pattern, which keeps residuals away from the kink).  Every
    parameter element is perturbed, so only tiny probe models are accepted.
    """
    count = sum(p.numel() for p in model.parameters())
    if count > 20000:
        raise ValueError(f"gradient check perturbs every element; {count} parameters is too many")
    probe = copy.deepcopy(model).double()
    xt = torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2))).double()
    if target is None:
        with torch.no_grad():
            base = probe(xt, t)
        signs = torch.from_numpy(
            np.sign(np.random.Generator(np.random.Philox(key=7)).uniform(-1, 1, size=tuple(base.shape)))
        )
        yt = base + 0.5 * signs
    else:
        yt = torch.from_numpy(np.ascontiguousarray(target.transpose(0, 3, 1, 2))).double()

    loss = _smoothed_l1(probe(xt, t), yt, delta)
    grads = torch.autograd.grad(loss, list(probe.parameters()))

    def loss_value() -> float:
        with torch.no_grad():
            return float(_smoothed_l1(probe(xt, t), yt, delta))

    worst = 0.0
    with torch.no_grad():
        for param, grad in zip(probe.parameters(), grads):
            flat = param.view(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + h
                plus = loss_value()
                flat[i] = orig - h
                minus = loss_value()
                flat[i] = orig
                fd = (plus - minus) / (2.0 * h)
                ga = float(gflat[i])
                rel = abs(ga - fd) / max(abs(ga), abs(fd), 1e-8)
                worst = max(worst, rel)
    return worst
