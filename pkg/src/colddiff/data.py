"""Dataset ingestion, image file I/O, and the run-config text format.

Binary loaders are strict: they parse the IDX and CIFAR-10 batch layouts
bit-exactly and fail loudly (wrong magic, truncated payload, and dimension
mismatch are distinct errors) rather than ever truncating silently.  Pixel
bytes become unit-interval floats on load; writes quantize with
round(v * 255) after clamping.

Real face/animal corpora are user-supplied; for CI and desk-scale runs this
module ships procedural stand-ins (`synthetic_digits`, `synthetic_faces`)
drawn deterministically from an `RngStream`.
"""

from __future__ import annotations

import configparser
import io
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .core import RngStream, as_image, from_uint8, to_uint8

__all__ = [
    "DataFormatError",
    "Dataset",
    "load_mnist_idx",
    "load_idx_images",
    "load_idx_labels",
    "load_cifar_bin",
    "load_image_dir",
    "load_image",
    "save_image",
    "save_image_grid",
    "augment_batch",
    "synthetic_digits",
    "synthetic_faces",
    "make_synthetic_dataset",
    "parse_config",
    "load_config",
    "render_config",
    "coerce_config",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073


class DataFormatError(ValueError):
    """A binary input did not match its declared format."""


@dataclass
class Dataset:
    """An in-memory image collection with deterministic iteration order."""

    name: str
    images: np.ndarray  # (N, H, W, C) float64 in [0, 1]
    labels: np.ndarray | None = None
    split: str = "train"

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 4:
            raise ValueError("dataset images must be a (N, H, W, C) array")

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.images[i]

    def __iter__(self):
        return iter(self.images)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    @property
    def channels(self) -> int:
        return self.images.shape[3]


# ---------------------------------------------------------------------------
# IDX (big-endian magic + dims + unsigned bytes)
# ---------------------------------------------------------------------------

def _read_idx_header(raw: bytes, expected_magic: int, ndim: int, what: str) -> tuple[int, ...]:
    need = 4 + 4 * ndim
    if len(raw) < 4:
        raise DataFormatError(f"{what}: truncated payload (file shorter than its magic)")
    magic = int.from_bytes(raw[0:4], "big")
    if magic != expected_magic:
        raise DataFormatError(f"{what}: wrong magic 0x{magic:08x} (expected 0x{expected_magic:08x})")
    if len(raw) < need:
        raise DataFormatError(f"{what}: truncated payload (incomplete dimension header)")
    return tuple(int.from_bytes(raw[4 + 4 * i: 8 + 4 * i], "big") for i in range(ndim))


def _check_payload(raw: bytes, offset: int, expected: int, what: str) -> None:
    actual = len(raw) - offset
    if actual < expected:
        raise DataFormatError(f"{what}: truncated payload ({actual} bytes, expected {expected})")
    if actual > expected:
        raise DataFormatError(f"{what}: dimension mismatch (payload exceeds header dimensions)")


def load_idx_images(path) -> np.ndarray:
    """Parse an IDX image file into an (N, rows, cols, 1) float array."""
    raw = Path(path).read_bytes()
    n, rows, cols = _read_idx_header(raw, IDX_IMAGES_MAGIC, 3, "idx images")
    _check_payload(raw, 16, n * rows * cols, "idx images")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16)
    return from_uint8(pixels.reshape(n, rows, cols, 1))


def load_idx_labels(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (n,) = _read_idx_header(raw, IDX_LABELS_MAGIC, 1, "idx labels")
    _check_payload(raw, 8, n, "idx labels")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8).copy()


def load_mnist_idx(images_path, labels_path=None, split: str = "train") -> Dataset:
    """Load an IDX image file (optionally with labels) as a Dataset."""
    images = load_idx_images(images_path)
    labels = None
    if labels_path is not None:
        labels = load_idx_labels(labels_path)
        if len(labels) != images.shape[0]:
            raise DataFormatError(
                f"idx: dimension mismatch between images ({images.shape[0]}) and labels ({len(labels)})"
            )
    return Dataset(name="mnist", images=images, labels=labels, split=split)


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches (1 label byte + 3072 channel-planar pixel bytes)
# ---------------------------------------------------------------------------

def load_cifar_bin(paths, split: str = "train") -> Dataset:
    """Parse one or more CIFAR-10 binary batch files (32x32x3)."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) == 0:
            warnings.warn(f"cifar batch {path} is empty")
            continue
        if len(raw) % CIFAR_RECORD_BYTES != 0:
            raise DataFormatError(
                f"cifar batch {path}: size {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels.append(records[:, 0].copy())
        planes = records[:, 1:].reshape(-1, 3, 32, 32)
        images.append(from_uint8(planes.transpose(0, 2, 3, 1)))
    if not images:
        return Dataset(name="cifar10", images=np.zeros((0, 32, 32, 3)), labels=None, split=split)
    return Dataset(name="cifar10", images=np.concatenate(images),
                   labels=np.concatenate(labels), split=split)


# ---------------------------------------------------------------------------
# image files and grids
# ---------------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    with PILImage.open(path) as img:
        if img.mode in ("L", "I;16", "1"):
            arr = np.asarray(img.convert("L"), dtype=np.uint8)[:, :, None]
        else:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return from_uint8(arr)


def save_image(x: np.ndarray, path) -> None:
    """Clamp, quantize to 8 bits and write losslessly (PNG by default)."""
    x = as_image(x)
    data = to_uint8(x)
    if data.shape[2] == 1:
        PILImage.fromarray(data[:, :, 0], mode="L").save(path)
    else:
        PILImage.fromarray(data, mode="RGB").save(path)


def load_image_dir(path, resolution: int, split: str = "train") -> Dataset:
    """Decode every raster in a directory: center-crop to square, bilinear
    resize to `resolution`, RGB channel order, lexicographic file order.

    Undecodable files are skipped with a warning; zero decodable files is
    an error.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a directory")
    images = []
    for entry in sorted(p for p in root.iterdir() if p.is_file()):
        try:
            with PILImage.open(entry) as img:
                img = img.convert("RGB")
                side = min(img.size)
                left = (img.size[0] - side) // 2
                top = (img.size[1] - side) // 2
                img = img.crop((left, top, left + side, top + side))
                img = img.resize((resolution, resolution), PILImage.BILINEAR)
                images.append(from_uint8(np.asarray(img, dtype=np.uint8)))
        except (OSError, SyntaxError) as exc:
            warnings.warn(f"skipping undecodable file {entry}: {exc}")
    if not images:
        raise DataFormatError(f"no decodable images found under {root}")
    return Dataset(name=root.name, images=np.stack(images), split=split)


def save_image_grid(images, columns: int, path) -> None:
    """Tile images row-major into a single raster and write it.

    Requires a nonempty list of uniform shapes; short final rows are padded
    with black cells.
    """
    images = [as_image(img) for img in images]
    if not images:
        raise ValueError("cannot write an empty grid")
    if columns < 1:
        raise ValueError("columns must be positive")
    shape = images[0].shape
    if any(img.shape != shape for img in images):
        raise ValueError("grid images must share one shape")
    h, w, c = shape
    rows = -(-len(images) // columns)
    canvas = np.zeros((rows * h, columns * w, c))
    for i, img in enumerate(images):
        r, col = divmod(i, columns)
        canvas[r * h:(r + 1) * h, col * w:(col + 1) * w] = img
    save_image(canvas, path)


def augment_batch(batch: np.ndarray, gen: np.random.Generator, flip: bool = True,
                  crop: bool = True, pad: int = 4) -> np.ndarray:
    """Random horizontal flips and padded random crops on a (B, H, W, C) stack."""
    batch = np.asarray(batch, dtype=np.float64).copy()
    b, h, w, _ = batch.shape
    if flip:
        do = gen.random(b) < 0.5
        batch[do] = batch[do, :, ::-1]
    if crop:
        padded = np.pad(batch, ((0, 0), (pad, pad), (pad, pad), (0, 0)), mode="reflect")
        offsets = gen.integers(0, 2 * pad + 1, size=(b, 2))
        batch = np.stack([
            padded[i, r:r + h, c:c + w] for i, (r, c) in enumerate(offsets)
        ])
    return batch


# ---------------------------------------------------------------------------
# procedural stand-in datasets (deterministic from an RngStream)
# ---------------------------------------------------------------------------

# digit skeletons as polylines in a unit box (x right, y down)
_DIGIT_STROKES: dict[int, list[list[tuple[float, float]]]] = {
    0: [[(0.5, 0.12), (0.78, 0.3), (0.78, 0.7), (0.5, 0.88), (0.22, 0.7), (0.22, 0.3), (0.5, 0.12)]],
    1: [[(0.35, 0.25), (0.55, 0.12), (0.55, 0.88)], [(0.35, 0.88), (0.75, 0.88)]],
    2: [[(0.25, 0.3), (0.4, 0.12), (0.65, 0.15), (0.75, 0.35), (0.3, 0.88), (0.78, 0.88)]],
    3: [[(0.25, 0.15), (0.7, 0.15), (0.45, 0.45), (0.75, 0.65), (0.55, 0.9), (0.25, 0.82)]],
    4: [[(0.65, 0.88), (0.65, 0.12), (0.22, 0.62), (0.8, 0.62)]],
    5: [[(0.75, 0.12), (0.28, 0.12), (0.28, 0.48), (0.62, 0.45), (0.76, 0.68), (0.55, 0.9), (0.25, 0.82)]],
    6: [[(0.68, 0.12), (0.35, 0.4), (0.25, 0.68), (0.45, 0.9), (0.72, 0.75), (0.62, 0.5), (0.3, 0.58)]],
    7: [[(0.22, 0.12), (0.78, 0.12), (0.42, 0.88)]],
    8: [[(0.5, 0.12), (0.72, 0.28), (0.5, 0.48), (0.28, 0.28), (0.5, 0.12)],
        [(0.5, 0.48), (0.75, 0.7), (0.5, 0.9), (0.25, 0.7), (0.5, 0.48)]],
    9: [[(0.7, 0.42), (0.42, 0.5), (0.3, 0.25), (0.55, 0.1), (0.7, 0.3), (0.62, 0.88)]],
}


def _render_strokes(strokes, resolution: int, width: float) -> np.ndarray:
    ys, xs = np.mgrid[0:resolution, 0:resolution]
    grid = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    canvas = np.zeros(resolution * resolution)
    for line in strokes:
        pts = np.asarray(line) * (resolution - 1)
        for p, q in zip(pts[:-1], pts[1:]):
            seg = q - p
            denom = float(seg @ seg)
            rel = grid - p
            s = np.clip((rel @ seg) / denom, 0.0, 1.0) if denom > 0 else np.zeros(len(rel))
            nearest = p + s[:, None] * seg
            d2 = np.sum((grid - nearest) ** 2, axis=1)
            canvas = np.maximum(canvas, np.exp(-d2 / (2.0 * width * width)))
    return canvas.reshape(resolution, resolution, 1)


def synthetic_digits(n: int, rng: RngStream, resolution: int = 28) -> Dataset:
    """Procedural handwritten-digit stand-in: jittered stroke renderings."""
    gen = rng.generator()
    images, labels = [], []
    for _ in range(n):
        digit = int(gen.integers(0, 10))
        theta = gen.uniform(-0.18, 0.18)
        scale = gen.uniform(0.85, 1.12)
        shift = gen.uniform(-0.06, 0.06, size=2)
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        strokes = [
            [(tuple((rot @ ((np.array(p) - 0.5) * scale)) + 0.5 + shift)) for p in line]
            for line in _DIGIT_STROKES[digit]
        ]
        width = gen.uniform(0.9, 1.5) * resolution / 28.0
        images.append(np.clip(_render_strokes(strokes, resolution, width), 0.0, 1.0))
        labels.append(digit)
    return Dataset(name="synthetic-digits", images=np.stack(images),
                   labels=np.asarray(labels, dtype=np.uint8))


def _soft_ellipse(ys, xs, center, radii, sharpness: float = 6.0) -> np.ndarray:
    u = (xs - center[0]) / radii[0]
    v = (ys - center[1]) / radii[1]
    arg = np.clip(sharpness * (1.0 - (u * u + v * v)), -60.0, 60.0)
    return 1.0 / (1.0 + np.exp(-arg))


def synthetic_faces(n: int, rng: RngStream, resolution: int = 32) -> Dataset:
    """Procedural face-like RGB images: background, head, eyes, mouth."""
    gen = rng.generator()
    ys, xs = np.mgrid[0:resolution, 0:resolution] / (resolution - 1)
    images = []
    for _ in range(n):
        bg = gen.uniform(0.2, 0.9, size=3)
        skin = np.array([gen.uniform(0.55, 0.95), gen.uniform(0.4, 0.75), gen.uniform(0.3, 0.6)])
        img = np.ones((resolution, resolution, 3)) * bg
        cx, cy = 0.5 + gen.uniform(-0.05, 0.05, size=2)
        rx, ry = gen.uniform(0.3, 0.38), gen.uniform(0.36, 0.45)
        head = _soft_ellipse(ys, xs, (cx, cy), (rx, ry))[:, :, None]
        img = img * (1 - head) + head * skin
        for side in (-1, 1):
            ex = cx + side * gen.uniform(0.12, 0.17)
            ey = cy - gen.uniform(0.08, 0.14)
            eye = _soft_ellipse(ys, xs, (ex, ey), (0.05, 0.035), 12.0)[:, :, None]
            img = img * (1 - eye) + eye * gen.uniform(0.0, 0.25, size=3)
        my = cy + gen.uniform(0.15, 0.22)
        mouth = _soft_ellipse(ys, xs, (cx, my), (gen.uniform(0.1, 0.18), 0.04), 12.0)[:, :, None]
        img = img * (1 - mouth) + mouth * np.array([gen.uniform(0.4, 0.8), 0.15, 0.2])
        images.append(np.clip(img, 0.0, 1.0))
    return Dataset(name="synthetic-faces", images=np.stack(images))


def make_synthetic_dataset(kind: str, n: int, rng: RngStream,
                           resolution: int | None = None) -> Dataset:
    if kind == "digits":
        return synthetic_digits(n, rng, resolution or 28)
    if kind == "faces":
        return synthetic_faces(n, rng, resolution or 32)
    raise ValueError(f"unknown synthetic dataset kind {kind!r}")


# ---------------------------------------------------------------------------
# run-config text format: [section] blocks of key = value pairs
# ---------------------------------------------------------------------------

def parse_config(text: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys are case-sensitive
    parser.read_string(text)
    return {section: dict(parser.items(section)) for section in parser.sections()}


def load_config(path) -> dict[str, dict[str, str]]:
    return parse_config(Path(path).read_text())


def render_config(sections: dict[str, dict]) -> str:
    out = io.StringIO()
    for section in sections:
        out.write(f"[{section}]\n")
        for key, value in sections[section].items():
            out.write(f"{key} = {value}\n")
        out.write("\n")
    return out.getvalue()


def _coerce_value(raw: str, typ):
    if typ is bool:
        lowered = str(raw).strip().lower()
        if lowered in ("true", "yes", "1", "on"):
            return True
        if lowered in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return typ(raw)


def coerce_config(raw: dict[str, dict[str, str]], schema: dict[str, type]) -> dict[str, dict]:
    """Type every key against `schema` ("section.key" -> type).

    Unknown keys are rejected so stale configs fail loudly.
    """
    typed: dict[str, dict] = {}
    for section, entries in raw.items():
        typed[section] = {}
        for key, value in entries.items():
            dotted = f"{section}.{key}"
            if dotted not in schema:
                raise ValueError(f"unknown config key {dotted!r}")
            typed[section][key] = _coerce_value(value, schema[dotted])
    return typed
