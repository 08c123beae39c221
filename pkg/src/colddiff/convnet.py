"""Small time-conditioned encoder-decoder restorer and its checkpoint format.

Architecture: a stem convolution, three stride-2 downsampling stages
(default channel widths 32/64/128), and three mirrored upsampling stages
with skip connections; a sinusoidal embedding of the severity index is
projected to a per-channel bias at every stage.  All nonlinearities are
SiLU.  Shape-preserving for any input whose sides survive three halvings.

Checkpoints are a versioned binary container: magic "CDCK", a format
version, a JSON header (architecture descriptor, preset name, rng seed,
parameter names and shapes), then the live weights followed by the EMA
weights as little-endian float32 blobs in state-dict order.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import as_image

__all__ = ["sinusoidal_embedding", "ConvRestorer", "save_checkpoint", "load_checkpoint"]

CHECKPOINT_MAGIC = b"CDCK"
CHECKPOINT_VERSION = 1


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Transformer-style sin/cos position features of the step index.

    Accepts a (B,) tensor; returns (B, dim).
    """
    half = dim // 2
    device, dtype = t.device, t.dtype
    exponent = torch.arange(half, device=device, dtype=dtype) / max(half - 1, 1)
    freqs = torch.exp(-math.log(10000.0) * exponent)
    args = t[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if emb.shape[-1] < dim:
        emb = F.pad(emb, (0, dim - emb.shape[-1]))
    return emb


class ConvRestorer(nn.Module):
    """Time-conditioned encoder-decoder estimating the clean image."""

    family = "conv-encdec"

    def __init__(self, in_channels: int = 1, base_channels: tuple[int, int, int] = (32, 64, 128),
                 time_dim: int = 64, max_step: int | None = None):
        super().__init__()
        c0, c1, c2 = base_channels
        self.in_channels = in_channels
        self.base_channels = tuple(base_channels)
        self.time_dim = time_dim
        self.max_step = max_step

        self.time_mlp = nn.Sequential(
            nn.Linear(time_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.stem = nn.Conv2d(in_channels, c0, 3, padding=1)
        self.down = nn.ModuleList([
            nn.Conv2d(c0, c0, 3, stride=2, padding=1),
            nn.Conv2d(c0, c1, 3, stride=2, padding=1),
            nn.Conv2d(c1, c2, 3, stride=2, padding=1),
        ])
        self.down_time = nn.ModuleList([nn.Linear(time_dim, c) for c in (c0, c1, c2)])
        self.up = nn.ModuleList([
            nn.Conv2d(c2 + c1, c1, 3, padding=1),
            nn.Conv2d(c1 + c0, c0, 3, padding=1),
            nn.Conv2d(c0 + c0, c0, 3, padding=1),
        ])
        self.up_time = nn.ModuleList([nn.Linear(time_dim, c) for c in (c1, c0, c0)])
        self.head = nn.Conv2d(c0, in_channels, 3, padding=1)

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, x: torch.Tensor, t) -> torch.Tensor:
        if not torch.is_tensor(t):
            t = torch.full((x.shape[0],), float(t), dtype=x.dtype, device=x.device)
        else:
            t = t.to(dtype=x.dtype, device=x.device)
            if t.ndim == 0:
                t = t.expand(x.shape[0])
        emb = self.time_mlp(sinusoidal_embedding(t, self.time_dim))

        h = F.silu(self.stem(x))
        skips = []
        for conv, proj in zip(self.down, self.down_time):
            skips.append(h)
            h = F.silu(conv(h) + proj(emb)[:, :, None, None])
        for conv, proj in zip(self.up, self.up_time):
            skip = skips.pop()
            h = F.interpolate(h, size=skip.shape[-2:], mode="nearest")
            h = F.silu(conv(torch.cat([h, skip], dim=1)) + proj(emb)[:, :, None, None])
        return self.head(h)

    def restore(self, x: np.ndarray, t: int) -> np.ndarray:
        """Numpy-facing inference: (H, W, C) in, (H, W, C) float64 out."""
        x = as_image(x)
        if x.shape[2] != self.in_channels:
            raise ValueError(f"model expects {self.in_channels} channels, got {x.shape[2]}")
        if self.max_step is not None and t > self.max_step:
            raise ValueError(f"step {t} beyond the model's trained range {self.max_step}")
        dtype = next(self.parameters()).dtype
        with torch.no_grad():
            xt = torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1))[None]).to(dtype)
            out = self.forward(xt, int(t))
        return out[0].cpu().numpy().transpose(1, 2, 0).astype(np.float64)


def _weight_blob(state: dict[str, torch.Tensor], names: list[str]) -> bytes:
    parts = []
    for name in names:
        arr = state[name].detach().cpu().numpy().astype("<f4")
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(path, model: ConvRestorer, ema_state: dict[str, torch.Tensor] | None = None,
                    preset: str = "", seed: int = 0, stream: int = 0) -> None:
    """Write live and EMA weights with the architecture descriptor.

    With no EMA state the live weights are stored in both slots, so loaders
    never need a missing-EMA branch.
    """
    state = model.state_dict()
    names = list(state.keys())
    header = {
        "arch": {
            "in_channels": model.in_channels,
            "base_channels": list(model.base_channels),
            "time_dim": model.time_dim,
            "max_step": model.max_step,
        },
        "preset": preset,
        "seed": int(seed),
        "stream": int(stream),
        "params": [[n, list(state[n].shape)] for n in names],
    }
    blob = json.dumps(header).encode("utf-8")
    ema = ema_state if ema_state is not None else state
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(_weight_blob(state, names))
        f.write(_weight_blob(ema, names))


def load_checkpoint(path) -> tuple[ConvRestorer, ConvRestorer, dict]:
    """Read a checkpoint; returns (live model, EMA model, header metadata)."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file (bad magic {raw[:4]!r})")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    hlen = struct.unpack("<I", raw[8:12])[0]
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    offset = 12 + hlen

    def read_state(off: int) -> tuple[dict[str, torch.Tensor], int]:
        state = {}
        for name, shape in header["params"]:
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
            state[name] = torch.from_numpy(arr.copy())
            off += 4 * count
        return state, off

    live_state, offset = read_state(offset)
    ema_state, offset = read_state(offset)
    if offset != len(raw):
        raise ValueError("checkpoint payload size does not match its header")

    arch = header["arch"]

    def make(state):
        model = ConvRestorer(
            in_channels=arch["in_channels"],
            base_channels=tuple(arch["base_channels"]),
            time_dim=arch["time_dim"],
            max_step=arch["max_step"],
        )
        model.load_state_dict(state)
        model.eval()
        return model

    return make(live_state), make(ema_state), header
