"""Single executable for the full pipeline.

Subcommands: degrade, train, restore, sample, generate, eval, stability,
presets.  Every artifact-producing run gets its own directory (timestamp +
seed unless --out is given) containing exactly one manifest.json with the
resolved config, seeds, timestamps, artifact paths and code version;
re-running with the same seed and --threads 1 reproduces artifacts
bit-for-bit.

Exit codes: 0 success, 2 usage error, 3 missing input, 4 numerical failure.
Inputs may be image directories, IDX / CIFAR binary files (detected by
content), or procedural stand-ins ("synthetic:digits:256",
"synthetic:faces:64").  Bare names ("mnist", "cifar10") resolve against
$COLDDIFF_CACHE.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import RngStream, clamp_unit
from .convnet import load_checkpoint, save_checkpoint
from .data import (
    DataFormatError,
    Dataset,
    load_cifar_bin,
    load_config,
    load_image_dir,
    load_mnist_idx,
    make_synthetic_dataset,
    save_image,
    save_image_grid,
)
from .generate import (
    ChannelMeanPrior,
    DonorPrior,
    LowResGaussianPrior,
    SolidColorPrior,
    fit_channel_mean_gmm,
    generate,
    save_prior,
)
from .metrics import compare_sets, frechet_proxy
from .presets import build_degradation, list_presets, preset_config
from .sample import cold_sample, export_trajectory, naive_sample
from .stability import stability_sweep
from .training import TrainingDiverged, hyper_preset, train_restorer

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_NUMERICAL = 4


class MissingInputError(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# run manifests
# ---------------------------------------------------------------------------

def _code_version() -> dict:
    version = {"package": __version__}
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        if rev.returncode == 0:
            version["git"] = rev.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return version


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int
    stream: int
    threads: int
    started: str
    finished: str = ""
    artifacts: list[str] = field(default_factory=list)
    version: dict = field(default_factory=_code_version)

    def write(self, run_dir: Path) -> Path:
        self.finished = _timestamp()
        path = run_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, default=str) + "\n")
        return path


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S")


def _make_run_dir(args, subcommand: str) -> Path:
    if args.out:
        run_dir = Path(args.out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = Path("runs") / f"{subcommand}-{stamp}-seed{args.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


# ---------------------------------------------------------------------------
# input resolution
# ---------------------------------------------------------------------------

def _cache_dir() -> Path:
    return Path(os.environ.get("COLDDIFF_CACHE", "data"))


def _resolve_named(name: str, split: str) -> Dataset:
    cache = _cache_dir()
    if name == "mnist":
        stem = "train" if split == "train" else "t10k"
        images = cache / "mnist" / f"{stem}-images-idx3-ubyte"
        if not images.exists():
            raise MissingInputError(f"no MNIST images at {images} (set COLDDIFF_CACHE)")
        return load_mnist_idx(images, split=split)
    if name == "cifar10":
        batches = sorted((cache / "cifar10").glob("*.bin"))
        if not batches:
            raise MissingInputError(f"no CIFAR batches under {cache / 'cifar10'}")
        return load_cifar_bin(batches, split=split)
    raise MissingInputError(f"unknown dataset name {name!r}")


def load_input(spec: str, rng: RngStream, resolution: int | None = None,
               split: str = "train") -> Dataset:
    """Resolve an --input argument to a Dataset.

    Accepts synthetic:digits[:N] / synthetic:faces[:N], a directory of
    images, an IDX or CIFAR binary file (content-sniffed), or a bare
    dataset name resolved against $COLDDIFF_CACHE.
    """
    if spec.startswith("synthetic:"):
        parts = spec.split(":")
        kind = parts[1]
        n = int(parts[2]) if len(parts) > 2 else 256
        return make_synthetic_dataset(kind, n, rng, resolution)

    path = Path(spec)
    if path.is_dir():
        return load_image_dir(path, resolution or 32, split=split)
    if path.is_file():
        head = path.read_bytes()[:4]
        if head == (0x00000803).to_bytes(4, "big"):
            return load_mnist_idx(path, split=split)
        if path.stat().st_size % 3073 == 0 and path.suffix == ".bin":
            return load_cifar_bin(path, split=split)
        raise DataFormatError(f"cannot identify the format of {path}")
    return _resolve_named(spec, split)


def _pad_to(images: np.ndarray, side: int) -> np.ndarray:
    """Zero-pad (N, H, W, C) images symmetrically up to side x side."""
    _, h, w, _ = images.shape
    if h == side and w == side:
        return images
    if h > side or w > side:
        raise ValueError(f"cannot pad {h}x{w} images down to {side}")
    top, left = (side - h) // 2, (side - w) // 2
    pads = ((0, 0), (top, side - h - top), (left, side - w - left), (0, 0))
    return np.pad(images, pads)


def _prepare_images(dataset: Dataset, cfg: dict) -> np.ndarray:
    images = dataset.images
    if "pad_to" in cfg:
        images = _pad_to(images, int(cfg["pad_to"]))
    return images


def _shape_of(images: np.ndarray) -> tuple[int, int, int]:
    return tuple(images.shape[1:])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_presets(args) -> int:
    for name in list_presets():
        cfg = preset_config(name)
        params = ", ".join(f"{k}={v}" for k, v in cfg.items() if k != "family")
        print(f"{name:<22} {params}")
    return EXIT_OK


def _dump_grid(images, run_dir: Path, name: str, columns: int = 8) -> Path:
    path = run_dir / name
    save_image_grid(list(images), min(columns, max(1, len(images))), path)
    return path


def _cmd_degrade(args, manifest: RunManifest, run_dir: Path, rng: RngStream) -> int:
    cfg = preset_config(args.preset)
    dataset = load_input(args.input, rng.child(0), args.resolution)
    images = _prepare_images(dataset, cfg)[: args.limit]
    degraded = []
    for i, img in enumerate(images):
        deg = build_degradation(cfg, _shape_of(images), rng.child(1 + i))
        degraded.append(deg(img, args.t))
    out_grid = _dump_grid(degraded, run_dir, f"degraded_t{args.t}.png")
    manifest.artifacts.append(str(out_grid))
    per_image = run_dir / "images"
    per_image.mkdir(exist_ok=True)
    for i, img in enumerate(degraded):
        save_image(img, per_image / f"{i:04d}.png")
    manifest.artifacts.append(str(per_image))
    print(f"degraded {len(degraded)} images at t={args.t} -> {out_grid}")
    return EXIT_OK


def _cmd_train(args, manifest: RunManifest, run_dir: Path, rng: RngStream) -> int:
    cfg = preset_config(args.preset)
    dataset = load_input(args.input, rng.child(0), args.resolution)
    images = _prepare_images(dataset, cfg)
    degradation = build_degradation(cfg, _shape_of(images), rng.child(1))

    overrides = {}
    if args.batch_size:
        overrides["batch_size"] = args.batch_size
    if args.lr:
        overrides["lr"] = args.lr
    if args.log_every:
        overrides["log_every"] = args.log_every
    train_cfg = hyper_preset(args.hyper, args.steps, **overrides)

    result = train_restorer(images, degradation, train_cfg, rng.child(2))

    ckpt = run_dir / "model.cdck"
    save_checkpoint(ckpt, result.model, result.ema.shadow, preset=args.preset,
                    seed=args.seed, stream=args.stream)
    losses = run_dir / "loss.jsonl"
    with open(losses, "w") as f:
        for i, value in enumerate(result.loss_history):
            f.write(json.dumps({"step": i, "l1": value}) + "\n")
    manifest.artifacts += [str(ckpt), str(losses)]
    final = np.mean(result.loss_history[-100:]) if result.loss_history else float("nan")
    print(f"trained {args.steps} steps (final l1 ~ {final:.4f}) -> {ckpt}")
    return EXIT_OK


def _load_model(args):
    if not Path(args.checkpoint).exists():
        raise MissingInputError(f"checkpoint {args.checkpoint} not found")
    live, ema, header = load_checkpoint(args.checkpoint)
    model = live if args.weights == "live" else ema
    return model, header


def _cmd_restore(args, manifest: RunManifest, run_dir: Path, rng: RngStream) -> int:
    model, _ = _load_model(args)
    cfg = preset_config(args.preset)
    dataset = load_input(args.input, rng.child(0), args.resolution)
    images = _prepare_images(dataset, cfg)[: args.limit]
    degradation = build_degradation(cfg, _shape_of(images), rng.child(1))

    rows = []
    for i, img in enumerate(images):
        deg = degradation.reseed(rng.child(2 + i)) if degradation.randomized else degradation
        x_t = deg(img, args.t)
        rows += [x_t, model.restore(x_t, args.t), img]
    grid = _dump_grid([clamp_unit(r) for r in rows], run_dir, "restore_direct.png", columns=3)
    manifest.artifacts.append(str(grid))
    print(f"direct restoration of {len(images)} images -> {grid}")
    return EXIT_OK


def _cmd_sample(args, manifest: RunManifest, run_dir: Path, rng: RngStream) -> int:
    model, _ = _load_model(args)
    cfg = preset_config(args.preset)
    dataset = load_input(args.input, rng.child(0), args.resolution)
    images = _prepare_images(dataset, cfg)[: args.limit]
    degradation = build_degradation(cfg, _shape_of(images), rng.child(1))
    sampler = cold_sample if args.algorithm == "improved" else naive_sample

    finals, degradeds = [], []
    for i, img in enumerate(images):
        deg = degradation.reseed(rng.child(2 + i)) if degradation.randomized else degradation
        x_t = deg(img, args.t)
        traj = sampler(x_t, args.t, model, deg, ground_truth=img)
        finals.append(traj.final)
        degradeds.append(x_t)
        if i == 0:
            sidecar = export_trajectory(traj, run_dir / "trajectory_0")
            manifest.artifacts.append(str(sidecar.parent))

    rows = [img for triple in zip(degradeds, finals, images) for img in triple]
    grid = _dump_grid([clamp_unit(r) for r in rows], run_dir, "sampled.png", columns=3)
    manifest.artifacts.append(str(grid))

    report = compare_sets([clamp_unit(f) for f in finals], list(images))
    (run_dir / "report.txt").write_text(report.render_text() + "\n")
    manifest.artifacts.append(str(run_dir / "report.txt"))
    print(f"sampled {len(finals)} images with {args.algorithm} sampling")
    print(report.render_text())
    return EXIT_OK


def _cmd_generate(args, manifest: RunManifest, run_dir: Path, rng: RngStream) -> int:
    model, _ = _load_model(args)
    cfg = preset_config(args.preset)
    dataset = load_input(args.fit_input, rng.child(0), args.resolution)
    images = _prepare_images(dataset, cfg)
    shape = _shape_of(images)
    degradation = build_degradation(cfg, shape, rng.child(1))

    if args.prior == "gmm":
        gmm, _ = fit_channel_mean_gmm(images, args.components, rng.child(2))
        prior = ChannelMeanPrior(gmm, shape)
        prior_path = run_dir / "prior.cdpr"
        save_prior(prior_path, gmm)
        manifest.artifacts.append(str(prior_path))
    elif args.prior == "solid":
        prior = SolidColorPrior(shape)
    elif args.prior == "lowres":
        prior = LowResGaussianPrior.fit(images, shape)
    elif args.prior == "donor":
        prior = DonorPrior(images)
    else:
        raise ValueError(f"unknown prior {args.prior!r}")

    samples = generate(prior, degradation, model, args.n, rng.child(3), sigma=args.sigma)
    grid = _dump_grid([clamp_unit(s) for s in samples], run_dir, "generated.png")
    manifest.artifacts.append(str(grid))
    proxy = frechet_proxy(samples, list(images)) if args.n >= 2 else float("nan")
    print(f"generated {args.n} images (proxy vs fit set: {proxy:.4f}) -> {grid}")
    return EXIT_OK


def _cmd_eval(args, manifest: RunManifest, run_dir: Path, rng: RngStream) -> int:
    set_a = load_input(args.set_a, rng.child(0), args.resolution)
    set_b = load_input(args.set_b, rng.child(1), args.resolution)
    reference = None
    if args.reference:
        reference = load_input(args.reference, rng.child(2), args.resolution).images
    report = compare_sets(list(set_a.images), list(set_b.images), reference)
    (run_dir / "report.txt").write_text(report.render_text() + "\n")
    (run_dir / "report.jsonl").write_text(report.to_jsonl() + "\n")
    manifest.artifacts += [str(run_dir / "report.txt"), str(run_dir / "report.jsonl")]
    print(report.render_text())
    return EXIT_OK


def _cmd_stability(args, manifest: RunManifest, run_dir: Path, rng: RngStream) -> int:
    eps_grid = [float(v) for v in args.eps.split(",")]
    t_grid = [int(v) for v in args.t.split(",")]
    size = args.size
    shape = (size, size, 1)
    x0 = rng.child(0).generator().random(shape)

    degradations = {}
    max_t = max(t_grid)
    for family in args.family.split(","):
        if family == "linear":
            e = rng.child(1).generator().standard_normal(shape)
            from .degrade import LinearDegradation
            degradations["linear"] = LinearDegradation(e, max_t)
        elif family == "blur":
            from .degrade import BlurDegradation
            degradations["blur"] = BlurDegradation(11, tuple([1.0] * max_t))
        else:
            raise ValueError(f"unknown sweep family {family!r}")

    result = stability_sweep(degradations, x0, eps_grid, t_grid,
                             mode=args.mode, rng=rng.child(2))
    table = result.render_table()
    (run_dir / "stability.txt").write_text(table + "\n")
    (run_dir / "stability.jsonl").write_text(result.to_jsonl() + "\n")
    manifest.artifacts += [str(run_dir / "stability.txt"), str(run_dir / "stability.jsonl")]
    print(table)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="base RNG seed")
    parser.add_argument("--stream", type=int, default=0, help="RNG stream id")
    parser.add_argument("--threads", type=int, default=0,
                        help="compute threads (default: all cores; 1 = bitwise deterministic)")
    parser.add_argument("--out", default="", help="run directory (default: runs/<cmd>-<stamp>-seed<seed>)")
    parser.add_argument("--config", default="", help="config file; flags override its keys")
    parser.add_argument("--dry-run", action="store_true", help="print the resolved plan, write nothing")
    parser.add_argument("--resolution", type=int, default=None,
                        help="target resolution when decoding image directories")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="colddiff",
                                     description="generalized diffusion with deterministic degradations")
    sub = parser.add_subparsers(dest="subcommand")

    p = sub.add_parser("presets", help="list degradation presets")
    _add_common(p)

    p = sub.add_parser("degrade", help="apply a degradation preset at severity t")
    _add_common(p)
    p.add_argument("--preset", required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--limit", type=int, default=16)

    p = sub.add_parser("train", help="train the conv restorer against a preset")
    _add_common(p)
    p.add_argument("--preset", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--hyper", default="desk", help="hyper preset: published, published-inpaint, desk")
    p.add_argument("--batch-size", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.0)
    p.add_argument("--log-every", type=int, default=0)

    p = sub.add_parser("restore", help="one-shot direct restoration R(x_t, t)")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--preset", required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--limit", type=int, default=8)
    p.add_argument("--weights", choices=("ema", "live"), default="ema")

    p = sub.add_parser("sample", help="iterative sampling back from x_t")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--preset", required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--limit", type=int, default=8)
    p.add_argument("--algorithm", choices=("improved", "naive"), default="improved")
    p.add_argument("--weights", choices=("ema", "live"), default="ema")

    p = sub.add_parser("generate", help="unconditional generation from an endpoint prior")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--preset", required=True)
    p.add_argument("--fit-input", required=True, help="dataset the prior is fitted on")
    p.add_argument("--prior", choices=("gmm", "solid", "lowres", "donor"), default="gmm")
    p.add_argument("--components", type=int, default=1)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--sigma", type=float, default=0.002)
    p.add_argument("--weights", choices=("ema", "live"), default="ema")

    p = sub.add_parser("eval", help="reconstruction metrics between image sets")
    _add_common(p)
    p.add_argument("--set-a", required=True)
    p.add_argument("--set-b", required=True)
    p.add_argument("--reference", default="")

    p = sub.add_parser("stability", help="perturbation sweep over both samplers")
    _add_common(p)
    p.add_argument("--family", default="linear")
    p.add_argument("--eps", default="0.1,1,10")
    p.add_argument("--t", default="64")
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--mode", choices=("fixed_offset", "seeded_random", "adversarial_constant"),
                   default="fixed_offset")

    return parser, dict(sub.choices)


_HANDLERS = {
    "degrade": _cmd_degrade,
    "train": _cmd_train,
    "restore": _cmd_restore,
    "sample": _cmd_sample,
    "generate": _cmd_generate,
    "eval": _cmd_eval,
    "stability": _cmd_stability,
}

# config-file keys each subcommand accepts ("section.key" -> type)
_CONFIG_SCHEMA: dict[str, type] = {
    "run.seed": int, "run.stream": int, "run.threads": int, "run.resolution": int,
    "degrade.preset": str, "degrade.t": int, "degrade.input": str, "degrade.limit": int,
    "train.preset": str, "train.input": str, "train.steps": int, "train.hyper": str,
    "train.batch_size": int, "train.lr": float, "train.log_every": int,
    "restore.checkpoint": str, "restore.preset": str, "restore.t": int,
    "restore.input": str, "restore.limit": int, "restore.weights": str,
    "sample.checkpoint": str, "sample.preset": str, "sample.t": int,
    "sample.input": str, "sample.limit": int, "sample.algorithm": str, "sample.weights": str,
    "generate.checkpoint": str, "generate.preset": str, "generate.fit_input": str,
    "generate.prior": str, "generate.components": int, "generate.n": int,
    "generate.sigma": float, "generate.weights": str,
    "eval.set_a": str, "eval.set_b": str, "eval.reference": str,
    "stability.family": str, "stability.eps": str, "stability.t": str,
    "stability.size": int, "stability.mode": str,
}


def _merge_config_file(args, parser: argparse.ArgumentParser) -> None:
    """File keys fill in only values the command line left at defaults."""
    if not args.config:
        return
    if not Path(args.config).exists():
        raise MissingInputError(f"config file {args.config} not found")
    from .data import coerce_config
    typed = coerce_config(load_config(args.config), _CONFIG_SCHEMA)
    defaults = {a.dest: a.default for a in parser._actions if hasattr(a, "dest")}

    for section in ("run", args.subcommand):
        for key, value in typed.get(section, {}).items():
            dest = key
            if getattr(args, dest, None) == defaults.get(dest):
                setattr(args, dest, value)


def _effective_config(args) -> dict:
    skip = {"subcommand", "config", "dry_run"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def main(argv=None) -> int:
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    if args.subcommand is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    try:
        if args.subcommand == "presets":
            return _cmd_presets(args)

        _merge_config_file(args, subparsers[args.subcommand])

        if args.threads:
            import torch
            torch.set_num_threads(max(1, args.threads))

        config = _effective_config(args)
        if args.dry_run:
            print(json.dumps({"subcommand": args.subcommand, "config": config}, indent=2, default=str))
            return EXIT_OK

        rng = RngStream(args.seed, args.stream)
        run_dir = _make_run_dir(args, args.subcommand)
        manifest = RunManifest(
            subcommand=args.subcommand, config=config, seed=args.seed,
            stream=args.stream, threads=args.threads, started=_timestamp(),
        )
        code = _HANDLERS[args.subcommand](args, manifest, run_dir, rng)
        manifest_path = manifest.write(run_dir)
        print(f"manifest: {manifest_path}")
        return code
    except MissingInputError as exc:
        print(f"colddiff: error: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except FileNotFoundError as exc:
        print(f"colddiff: error: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (TrainingDiverged, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"colddiff: error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, DataFormatError) as exc:
        print(f"colddiff: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
