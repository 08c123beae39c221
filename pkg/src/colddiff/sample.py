"""Sampling loops that walk a degraded image back to a clean estimate.

Two update rules, run for s = t, t-1, ..., 1 with x_hat = R(x_s, s):

- naive:     x_{s-1} = D(x_hat, s-1)
             (re-degrade the current clean estimate; error-accumulating
             whenever R is not an exact inverse)
- improved:  x_{s-1} = x_s - D(x_hat, s) + D(x_hat, s-1)
             (transport the current iterate by the degradation increment;
             exact for linear degradations regardless of R)

Plus the deterministic-noise variant: for interpolation degradations the
anchor can be estimated from the iterate itself,
z_hat = (x_t - sqrt(a_t) x_hat) / sqrt(1 - a_t), and the improved update
then collapses to x_{t-1} = sqrt(a_{t-1}) x_hat + sqrt(1 - a_{t-1}) z_hat.

No clamping happens inside the loops (iterates may transiently leave
[0, 1]); clamp on export only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import as_image, validate_step
from .degrade import Degradation

__all__ = [
    "Trajectory",
    "naive_sample",
    "cold_sample",
    "estimated_noise",
    "cold_sample_estimated",
    "export_trajectory",
]


@dataclass
class Trajectory:
    """Ordered iterates of one sampling run.

    `steps` runs strictly decreasing from t to 0 and `iterates[i]` is the
    image at steps[i] (so there are t + 1 iterates).  `restored` holds the
    per-step clean estimates x_hat (one per executed step).  `drift` is the
    sup-norm distance of each iterate from the true degradation path
    D(x_0, s), present only when ground truth was supplied.
    """

    steps: list[int]
    iterates: list[np.ndarray]
    restored: list[np.ndarray]
    drift: list[float] | None = None

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]

    def __len__(self) -> int:
        return len(self.iterates)


def _check_args(x_t, t, model, degradation):
    x_t = as_image(x_t)
    t = validate_step(t, degradation.total_steps)
    max_step = getattr(model, "max_step", None)
    if max_step is not None and degradation.total_steps > max_step:
        raise ValueError(
            f"model was trained for T={max_step} but the operator has T={degradation.total_steps}"
        )
    return x_t, t


def _drift_logger(degradation, ground_truth):
    if ground_truth is None:
        return None
    clean = as_image(ground_truth)

    def drift(x, s):
        return float(np.max(np.abs(x - degradation(clean, s))))

    return drift


def naive_sample(x_t: np.ndarray, t: int, model, degradation: Degradation,
                 ground_truth: np.ndarray | None = None) -> Trajectory:
    """Walk back by re-degrading the clean estimate: x_{s-1} = D(x_hat, s-1)."""
    x_t, t = _check_args(x_t, t, model, degradation)
    log = _drift_logger(degradation, ground_truth)

    steps, iterates, restored = [t], [x_t], []
    drift = [log(x_t, t)] if log else None
    x = x_t
    for s in range(t, 0, -1):
        x_hat = model.restore(x, s)
        x = degradation(x_hat, s - 1)
        restored.append(x_hat)
        steps.append(s - 1)
        iterates.append(x)
        if log:
            drift.append(log(x, s - 1))
    return Trajectory(steps, iterates, restored, drift)


def cold_sample(x_t: np.ndarray, t: int, model, degradation: Degradation,
                ground_truth: np.ndarray | None = None) -> Trajectory:
    """Walk back by transporting the iterate:
    x_{s-1} = x_s - D(x_hat, s) + D(x_hat, s-1).
    """
    x_t, t = _check_args(x_t, t, model, degradation)
    log = _drift_logger(degradation, ground_truth)

    steps, iterates, restored = [t], [x_t], []
    drift = [log(x_t, t)] if log else None
    x = x_t
    for s in range(t, 0, -1):
        x_hat = model.restore(x, s)
        x = x - degradation(x_hat, s) + degradation(x_hat, s - 1)
        restored.append(x_hat)
        steps.append(s - 1)
        iterates.append(x)
        if log:
            drift.append(log(x, s - 1))
    return Trajectory(steps, iterates, restored, drift)


def estimated_noise(x_t: np.ndarray, t: int, x_hat: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """Anchor estimate z_hat = (x_t - sqrt(a_t) x_hat) / sqrt(1 - a_t).

    Inverts the interpolation forward rule given a clean estimate; rejected
    at t = 0 where a_t = 1 makes the division degenerate.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    t = validate_step(t, len(alphas) - 1)
    if t < 1 or alphas[t] >= 1.0:
        raise ValueError(f"noise estimation needs t >= 1 with a_t < 1 (t={t})")
    a = alphas[t]
    return (as_image(x_t) - np.sqrt(a) * as_image(x_hat)) / np.sqrt(1.0 - a)


def cold_sample_estimated(x_t: np.ndarray, t: int, model, alphas: np.ndarray) -> Trajectory:
    """Improved sampling with the anchor re-estimated each step.

    Per step: x_hat = R(x_s, s); z_hat from `estimated_noise`; then
    x_{s-1} = sqrt(a_{s-1}) x_hat + sqrt(1 - a_{s-1}) z_hat, the closed
    form the improved update reduces to under interpolation degradations.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    x_t = as_image(x_t)
    t = validate_step(t, len(alphas) - 1)
    max_step = getattr(model, "max_step", None)
    if max_step is not None and len(alphas) - 1 > max_step:
        raise ValueError(f"model was trained for T={max_step} but the schedule has T={len(alphas) - 1}")

    steps, iterates, restored = [t], [x_t], []
    x = x_t
    for s in range(t, 0, -1):
        x_hat = model.restore(x, s)
        z_hat = estimated_noise(x, s, x_hat, alphas)
        x = np.sqrt(alphas[s - 1]) * x_hat + np.sqrt(1.0 - alphas[s - 1]) * z_hat
        restored.append(x_hat)
        steps.append(s - 1)
        iterates.append(x)
    return Trajectory(steps, iterates, restored, None)


def export_trajectory(trajectory: Trajectory, out_dir) -> Path:
    """Write numbered iterate images plus a JSON-lines metrics sidecar.

    Each sidecar record carries the step index, the drift (when logged) and
    the l2 norm of the increment from the previous iterate.
    """
    from .data import save_image  # local import; data pulls in PIL

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pad = len(str(max(trajectory.steps)))
    records = []
    prev = None
    for i, (s, x) in enumerate(zip(trajectory.steps, trajectory.iterates)):
        save_image(x, out / f"step_{s:0{pad}d}.png")
        rec = {"s": s}
        if trajectory.drift is not None:
            rec["drift"] = trajectory.drift[i]
        rec["increment_norm"] = (
            float(np.linalg.norm(x - prev)) if prev is not None else 0.0
        )
        records.append(rec)
        prev = x
    sidecar = out / "metrics.jsonl"
    with open(sidecar, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    return sidecar
