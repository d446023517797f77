"""Command-line entry point: train, fuse, eval and ablate subcommands.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric
failure.  Errors print a single machine-parsable line to stderr.

The WAVEFUSE_NUM_THREADS environment variable caps torch worker threads;
`train` and `ablate` default to a single thread so that seed-matched runs
are byte-reproducible.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, fields, replace

import numpy as np
import torch

from . import metrics, pipeline
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    NumericError,
    ValidationError,
    WaveFuseError,
)
from .network import NetworkConfig, load_checkpoint
from .pipeline import TrainingConfig

logger = logging.getLogger("wavefuse")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_TRAINING_KEYS = {f.name for f in fields(TrainingConfig)}
_NETWORK_KEYS = {f.name for f in fields(NetworkConfig)} - {"pooling_mode"}
_RUN_KEYS = {"manifest", "output_dir", "holdout_fraction"}


@dataclass
class RunConfig:
    manifest: str
    output_dir: str
    training: TrainingConfig
    network: NetworkConfig
    holdout_fraction: float = 0.1


def _parse_value(key: str, raw: str):
    if key in ("manifest", "output_dir", "pooling_mode"):
        return raw
    if key in ("learning_rate", "adam_beta1", "adam_beta2", "adam_epsilon",
               "patch_keep_threshold", "holdout_fraction"):
        return float(raw)
    return int(raw)


def parse_run_config(path: str) -> RunConfig:
    """Read a `key = value` run-config file; unknown keys are rejected."""
    if not os.path.exists(path):
        raise DataError(f"config file not found: {path}")
    known = _TRAINING_KEYS | _NETWORK_KEYS | _RUN_KEYS
    values: dict = {}
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            try:
                values[key] = _parse_value(key, raw)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    for required in ("manifest", "output_dir"):
        if required not in values:
            raise ConfigError(f"{path}: missing required key {required!r}")

    base = os.path.dirname(os.path.abspath(path))
    manifest = os.path.join(base, values.pop("manifest"))
    output_dir = os.path.join(base, values.pop("output_dir"))
    holdout = values.pop("holdout_fraction", 0.1)
    training_kwargs = {k: v for k, v in values.items() if k in _TRAINING_KEYS}
    network_kwargs = {k: v for k, v in values.items() if k in _NETWORK_KEYS}
    training = TrainingConfig(**training_kwargs)
    network = NetworkConfig(pooling_mode=training.pooling_mode, **network_kwargs)
    return RunConfig(manifest, output_dir, training, network, holdout)


def _configure_threads(default_single: bool) -> None:
    env = os.environ.get("WAVEFUSE_NUM_THREADS")
    if env:
        torch.set_num_threads(max(1, int(env)))
    elif default_single:
        torch.set_num_threads(1)


def _override_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return cfg
    return RunConfig(
        cfg.manifest, cfg.output_dir,
        replace(cfg.training, seed=seed), cfg.network, cfg.holdout_fraction,
    )


def _load_gray(path: str, what: str) -> np.ndarray:
    img = pipeline.load_image(path)
    if img.ndim == 3:
        raise DataError(
            f"{what} {path!r} is a color image; expected grayscale "
            f"(pass --color to fuse the luminance of a color second input)"
        )
    return img


def cmd_train(args) -> int:
    cfg = _override_seed(parse_run_config(args.config), args.seed)
    _configure_threads(default_single=True)
    pairs = pipeline.load_pairs(cfg.manifest)
    patches = pipeline.extract_patches(pairs, cfg.training)
    logger.info("training on %d patches from %d pairs", len(patches), len(pairs))
    result = pipeline.train(cfg.training, patches, cfg.network, cfg.output_dir)
    final = result.history[-1][1].total if result.history else float("nan")
    print(
        f"trained {len(result.history)} steps; final total loss {final:.6g}; "
        f"checkpoint {result.checkpoint_path}"
    )
    return EXIT_OK


def cmd_fuse(args) -> int:
    _configure_threads(default_single=False)
    model, _ = load_checkpoint(args.checkpoint)
    source_a = _load_gray(args.path_a, "source A")
    if args.color:
        func = pipeline.load_image(args.path_b)
        if func.ndim != 3:
            raise DataError(
                f"--color given but second input {args.path_b!r} is grayscale"
            )
        fused = pipeline.fuse_color(model, source_a, func)
        pipeline.save_image(args.out_path, fused)
    else:
        source_b = _load_gray(args.path_b, "source B")
        pair = pipeline.ImagePair(source_a, source_b, "ct_mr", "cli")
        result = pipeline.fuse_pair(model, pair)
        pipeline.save_image(args.out_path, result.image)
        logger.info("fused in %.4f s", result.runtime_seconds)
    print(f"wrote {args.out_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _configure_threads(default_single=False)

    def as_gray(path):
        img = pipeline.load_image(path)
        if img.ndim == 3:
            img = np.clip(pipeline.rgb_to_yuv(img)[0], 0.0, 1.0)
        return img

    fused = as_gray(args.fused)
    source_a = as_gray(args.src_a)
    source_b = as_gray(args.src_b)
    start = time.perf_counter()
    report = metrics.evaluate_all(fused, source_a, source_b)
    elapsed = time.perf_counter() - start
    pair_id = os.path.splitext(os.path.basename(args.fused))[0]
    metrics.write_report_csv(args.out_csv, [(pair_id, report)])
    logger.info("evaluated %s in %.4f s", pair_id, elapsed)
    print(f"wrote {args.out_csv}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _override_seed(parse_run_config(args.config), args.seed)
    _configure_threads(default_single=True)
    pairs = pipeline.load_pairs(cfg.manifest)
    result = pipeline.run_ablation(
        cfg.training, cfg.network, pairs, cfg.output_dir,
        holdout_fraction=cfg.holdout_fraction,
    )
    print(result.to_table())
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavefuse",
        description="Multimodal medical image fusion with wavelet edge-preserving pooling.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="enable info logging")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a fusion model from a run config")
    train.add_argument("config", help="run-config file (key = value lines)")
    train.add_argument("--seed", type=int, default=None, help="override the config seed")
    train.set_defaults(func=cmd_train)

    fuse = sub.add_parser("fuse", help="fuse one source pair with a trained model")
    fuse.add_argument("checkpoint")
    fuse.add_argument("path_a", help="MR source image (grayscale)")
    fuse.add_argument("path_b", help="CT or functional source image")
    fuse.add_argument("out_path", help="output image path")
    fuse.add_argument("--color", action="store_true",
                      help="treat the second input as RGB; fuse its luminance and "
                           "keep its chrominance")
    fuse.add_argument("--seed", type=int, default=None, help="accepted for uniformity")
    fuse.set_defaults(func=cmd_fuse)

    evaluate = sub.add_parser("eval", help="score a fused image against its sources")
    evaluate.add_argument("fused")
    evaluate.add_argument("src_a")
    evaluate.add_argument("src_b")
    evaluate.add_argument("out_csv")
    evaluate.add_argument("--seed", type=int, default=None, help="accepted for uniformity")
    evaluate.set_defaults(func=cmd_eval)

    ablate = sub.add_parser("ablate", help="compare pooling modes on one dataset")
    ablate.add_argument("config", help="run-config file (key = value lines)")
    ablate.add_argument("--seed", type=int, default=None, help="override the config seed")
    ablate.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError, ValidationError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except WaveFuseError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
