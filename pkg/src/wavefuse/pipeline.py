"""Dataset ingestion, patch extraction, training, inference and ablation.

Source pairs follow a fixed role assignment: ``source_a`` is the MR image
and ``source_b`` the CT image or the luminance channel of a SPECT/PET
image.  The gradient term of the objective references ``source_a`` only.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from PIL import Image as PILImage

from . import losses, metrics
from .errors import ConfigError, DataError, DimensionError, NumericError, ValidationError
from .network import FusionAutoencoder, NetworkConfig, build_model, save_checkpoint

logger = logging.getLogger("wavefuse")

__all__ = [
    "MODALITY_TAGS",
    "ImagePair",
    "TrainingConfig",
    "PatchPair",
    "TrainResult",
    "FusionResult",
    "AblationResult",
    "extract_patches",
    "train",
    "fuse_pair",
    "rgb_to_yuv",
    "yuv_to_rgb",
    "fuse_color",
    "run_ablation",
    "load_image",
    "save_image",
    "read_manifest",
    "load_pairs",
    "write_loss_csv",
]

MODALITY_TAGS = ("ct_mr", "mr_spect", "mr_pet")
PAIR_DIM_MULTIPLE = 8

# BT.601 full-range RGB <-> YUV.  The chrominance rows are built as scaled
# differences from the luma row (U ~ B-Y, V ~ R-Y), so achromatic inputs map
# to exactly zero chrominance instead of inheriting rounded-constant drift.
_LUMA = np.array([0.299, 0.587, 0.114])
_U_SCALE = 0.436 / (1.0 - _LUMA[2])
_V_SCALE = 0.615 / (1.0 - _LUMA[0])
_RGB_TO_YUV = np.stack(
    [
        _LUMA,
        _U_SCALE * (np.array([0.0, 0.0, 1.0]) - _LUMA),
        _V_SCALE * (np.array([1.0, 0.0, 0.0]) - _LUMA),
    ]
)
_YUV_TO_RGB = np.linalg.inv(_RGB_TO_YUV)


def _check_gray(img: np.ndarray, name: str) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"{name} must be a 2D image, got ndim={img.ndim}")
    if not np.all(np.isfinite(img)):
        raise ValidationError(f"{name} contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValidationError(f"{name} values must lie in [0, 1]")
    return img


@dataclass(frozen=True)
class ImagePair:
    """One registered source pair; dimensions must suit the default network."""

    source_a: np.ndarray
    source_b: np.ndarray
    modality_tag: str
    pair_id: str

    def __post_init__(self):
        a = _check_gray(self.source_a, "source_a")
        b = _check_gray(self.source_b, "source_b")
        if a.shape != b.shape:
            raise DimensionError(
                f"pair {self.pair_id!r}: source shapes differ {a.shape} vs {b.shape}"
            )
        if a.shape[0] % PAIR_DIM_MULTIPLE or a.shape[1] % PAIR_DIM_MULTIPLE:
            raise DimensionError(
                f"pair {self.pair_id!r}: dimensions {a.shape} must be divisible "
                f"by {PAIR_DIM_MULTIPLE}"
            )
        if self.modality_tag not in MODALITY_TAGS:
            raise ValidationError(
                f"pair {self.pair_id!r}: unknown modality tag {self.modality_tag!r}"
            )
        object.__setattr__(self, "source_a", a)
        object.__setattr__(self, "source_b", b)


@dataclass(frozen=True)
class TrainingConfig:
    patch_size: int = 64
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    pooling_mode: str = "wdepp"
    patch_keep_threshold: float = 0.02
    max_steps: int | None = None

    def __post_init__(self):
        if self.patch_size % PAIR_DIM_MULTIPLE:
            raise ConfigError(
                f"patch_size must be divisible by {PAIR_DIM_MULTIPLE}, "
                f"got {self.patch_size}"
            )
        if self.epochs < 0 or self.batch_size < 1 or self.patch_size < 8:
            raise ConfigError("epochs must be >= 0, batch_size and patch_size positive")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive")
        if self.patch_keep_threshold < 0.0:
            raise ConfigError("patch_keep_threshold must be >= 0")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")


@dataclass(frozen=True)
class PatchPair:
    a: np.ndarray
    b: np.ndarray
    pair_id: str
    row: int
    col: int


@dataclass
class TrainResult:
    checkpoint_path: str
    loss_csv_path: str
    history: list[tuple[int, losses.LossBreakdown]]
    model: FusionAutoencoder


@dataclass(frozen=True)
class FusionResult:
    image: np.ndarray
    runtime_seconds: float


def extract_patches(pairs: list[ImagePair], cfg: TrainingConfig) -> list[PatchPair]:
    """Non-overlapping patch_size tiles, filtered by source activity.

    A tile is kept iff max(std(tile_a), std(tile_b)) >= patch_keep_threshold
    (standard deviations on the [0, 1] intensity scale).  Order is
    deterministic: (pair_id, row, col).
    """
    ps = cfg.patch_size
    patches = []
    for pair in sorted(pairs, key=lambda p: p.pair_id):
        h, w = pair.source_a.shape
        if h < ps or w < ps:
            logger.warning(
                "pair %s (%dx%d) smaller than patch size %d; skipped",
                pair.pair_id, h, w, ps,
            )
            continue
        for row in range(h // ps):
            for col in range(w // ps):
                sl = (slice(row * ps, (row + 1) * ps), slice(col * ps, (col + 1) * ps))
                tile_a = pair.source_a[sl]
                tile_b = pair.source_b[sl]
                if max(tile_a.std(), tile_b.std()) >= cfg.patch_keep_threshold:
                    patches.append(PatchPair(tile_a, tile_b, pair.pair_id, row, col))
    return patches


def write_loss_csv(path: str, history: list[tuple[int, losses.LossBreakdown]]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["step", "intensity", "gradient", "structure", "total"])
        for step, item in history:
            writer.writerow(
                [step, repr(item.intensity), repr(item.gradient),
                 repr(item.structure), repr(item.total)]
            )


def train(cfg: TrainingConfig, patches: list[PatchPair], net_cfg: NetworkConfig,
          output_dir: str) -> TrainResult:
    """Seeded Adam training over shuffled minibatches of patch pairs.

    Writes a rolling checkpoint per epoch plus the final state, and the
    full per-step loss history as CSV.  Aborts with a step-indexed
    diagnostic if the loss stops being finite.
    """
    if not patches:
        raise ValidationError("no training patches (check patch_keep_threshold)")
    if net_cfg.pooling_mode != cfg.pooling_mode:
        net_cfg = replace(net_cfg, pooling_mode=cfg.pooling_mode)
    os.makedirs(output_dir, exist_ok=True)
    checkpoint_path = os.path.join(output_dir, "checkpoint.pt")
    loss_csv_path = os.path.join(output_dir, "loss_history.csv")

    model = build_model(net_cfg, seed=cfg.seed)
    dtype = next(model.parameters()).dtype
    stacked_a = torch.from_numpy(np.stack([p.a for p in patches])[:, None]).to(dtype)
    stacked_b = torch.from_numpy(np.stack([p.b for p in patches])[:, None]).to(dtype)

    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate,
        betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_epsilon,
    )
    shuffler = np.random.default_rng(cfg.seed)
    history: list[tuple[int, losses.LossBreakdown]] = []
    step = 0
    budget = cfg.max_steps
    model.train()
    stop = False
    for epoch in range(cfg.epochs):
        order = shuffler.permutation(len(patches))
        for start in range(0, len(patches), cfg.batch_size):
            if budget is not None and step >= budget:
                stop = True
                break
            batch = order[start : start + cfg.batch_size]
            a = stacked_a[batch]
            b = stacked_b[batch]
            x = torch.cat([a, b], dim=1)
            optimizer.zero_grad()
            total, intensity, gradient, structure = losses.total_loss_t(model(x), a, b)
            step += 1
            if not torch.isfinite(total):
                raise NumericError(f"training diverged (non-finite loss) at step {step}")
            total.backward()
            optimizer.step()
            model.training_step = step
            i, g, s = intensity.item(), gradient.item(), structure.item()
            history.append((step, losses.LossBreakdown(i, g, s, i + g + s)))
        if stop:
            break
        save_checkpoint(checkpoint_path, model, seed=cfg.seed)
    model.eval()
    save_checkpoint(checkpoint_path, model, seed=cfg.seed)
    write_loss_csv(loss_csv_path, history)
    return TrainResult(checkpoint_path, loss_csv_path, history, model)


def fuse_pair(model: FusionAutoencoder, pair: ImagePair) -> FusionResult:
    """Single inference-mode forward pass; wall-clock runtime is recorded."""
    dtype = next(model.parameters()).dtype
    x = torch.from_numpy(
        np.ascontiguousarray(np.stack([pair.source_a, pair.source_b], axis=0))
    ).to(dtype)[None]
    was_training = model.training
    model.eval()
    start = time.perf_counter()
    try:
        with torch.no_grad():
            fused = model(x)
    finally:
        model.train(was_training)
    elapsed = time.perf_counter() - start
    return FusionResult(fused[0, 0].numpy().astype(np.float64), elapsed)


def rgb_to_yuv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """BT.601 full-range conversion; chrominance channels are zero-centered."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DimensionError(f"expected a (H, W, 3) array, got {rgb.shape}")
    if not np.all(np.isfinite(rgb)):
        raise ValidationError("color image contains non-finite values")
    if rgb.min() < 0.0 or rgb.max() > 1.0:
        raise ValidationError("color values must lie in [0, 1]")
    yuv = np.einsum("ij,hwj->hwi", _RGB_TO_YUV, rgb)
    return yuv[:, :, 0], yuv[:, :, 1], yuv[:, :, 2]


def yuv_to_rgb(y: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`rgb_to_yuv`; output clipped to [0, 1]."""
    yuv = np.stack([y, u, v], axis=2)
    rgb = np.einsum("ij,hwj->hwi", _YUV_TO_RGB, yuv)
    return np.clip(rgb, 0.0, 1.0)


def fuse_color(model: FusionAutoencoder, mr: np.ndarray, func: np.ndarray) -> np.ndarray:
    """Fuse the MR image with the luminance of a functional color image.

    Chrominance passes through untouched; only Y is replaced by the fused
    channel before conversion back to RGB.
    """
    y, u, v = rgb_to_yuv(func)
    pair = ImagePair(mr, np.clip(y, 0.0, 1.0), "mr_spect", "color")
    fused = fuse_pair(model, pair)
    return yuv_to_rgb(fused.image, u, v)


@dataclass
class AblationResult:
    """Per-mode per-pair metric reports plus a Table-style summary."""

    modes: tuple[str, ...]
    per_pair: dict[str, list[tuple[str, metrics.MetricReport]]]
    holdout_ids: list[str] = field(default_factory=list)

    _ROWS = ("en", "sd", "sf", "q_abf", "mi", "q_c", "q_y", "scd", "viff",
             "runtime_seconds")

    def summary(self) -> dict[str, dict[str, tuple[float, float]]]:
        """metric -> mode -> (mean, population std) over the held-out pairs."""
        table: dict[str, dict[str, tuple[float, float]]] = {}
        for row in self._ROWS:
            table[row] = {}
            for mode in self.modes:
                values = np.array(
                    [getattr(r, row) for _, r in self.per_pair[mode]]
                )
                table[row][mode] = (float(values.mean()), float(values.std()))
        return table

    def to_table(self) -> str:
        summary = self.summary()
        width = 24
        lines = ["metric".ljust(12) + "".join(m.ljust(width) for m in self.modes)]
        for row in self._ROWS:
            label = "runtime_s" if row == "runtime_seconds" else row
            cells = [
                f"{summary[row][mode][0]:.4f} ± {summary[row][mode][1]:.4f}"
                for mode in self.modes
            ]
            lines.append(label.ljust(12) + "".join(c.ljust(width) for c in cells))
        return "\n".join(lines)

    def write_summary_csv(self, path: str) -> None:
        summary = self.summary()
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["metric", "mode", "mean", "std"])
            for row in self._ROWS:
                for mode in self.modes:
                    mean, std = summary[row][mode]
                    writer.writerow([row, mode, f"{mean:.9g}", f"{std:.9g}"])


def run_ablation(cfg: TrainingConfig, net_cfg: NetworkConfig,
                 pairs: list[ImagePair], output_dir: str,
                 modes: tuple[str, ...] = ("max", "average", "wdepp"),
                 holdout_fraction: float = 0.1) -> AblationResult:
    """Train one seed-matched model per pooling mode and score a held-out set.

    The train/holdout split is by pair (not by patch) to avoid leakage.
    Per-pair metric CSVs and a summary CSV are written under output_dir.
    """
    if len(pairs) < 2:
        raise ValidationError("ablation needs at least two pairs (one held out)")
    os.makedirs(output_dir, exist_ok=True)
    splitter = np.random.default_rng(cfg.seed)
    order = splitter.permutation(len(pairs))
    n_holdout = max(1, round(holdout_fraction * len(pairs)))
    holdout = [pairs[i] for i in order[:n_holdout]]
    training = [pairs[i] for i in order[n_holdout:]]
    logger.info(
        "ablation: %d training pairs, %d held-out pairs, modes %s",
        len(training), len(holdout), ",".join(modes),
    )

    per_pair: dict[str, list[tuple[str, metrics.MetricReport]]] = {}
    for mode in modes:
        mode_cfg = replace(cfg, pooling_mode=mode)
        patches = extract_patches(training, mode_cfg)
        mode_dir = os.path.join(output_dir, mode)
        result = train(mode_cfg, patches, replace(net_cfg, pooling_mode=mode), mode_dir)
        rows = []
        for pair in holdout:
            fused = fuse_pair(result.model, pair)
            report = metrics.evaluate_all(
                fused.image, pair.source_a, pair.source_b, elapsed=fused.runtime_seconds
            )
            rows.append((pair.pair_id, report))
        metrics.write_report_csv(os.path.join(mode_dir, "metrics.csv"), rows)
        per_pair[mode] = rows

    result = AblationResult(
        modes=tuple(modes), per_pair=per_pair,
        holdout_ids=[p.pair_id for p in holdout],
    )
    result.write_summary_csv(os.path.join(output_dir, "ablation_summary.csv"))
    with open(os.path.join(output_dir, "ablation_table.txt"), "w") as handle:
        handle.write(result.to_table() + "\n")
    return result


def load_image(path: str) -> np.ndarray:
    """8-bit grayscale or 24-bit RGB raster -> float64 array in [0, 1]."""
    try:
        with PILImage.open(path) as img:
            if img.mode in ("L", "I;16", "I"):
                data = np.asarray(img.convert("L"), dtype=np.float64)
                return data / 255.0
            data = np.asarray(img.convert("RGB"), dtype=np.float64)
            return data / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def save_image(path: str, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.float64)
    data = np.round(255.0 * np.clip(img, 0.0, 1.0)).astype(np.uint8)
    if img.ndim == 2:
        PILImage.fromarray(data, mode="L").save(path)
    elif img.ndim == 3 and img.shape[2] == 3:
        PILImage.fromarray(data, mode="RGB").save(path)
    else:
        raise DimensionError(f"cannot save image of shape {img.shape}")


def read_manifest(path: str) -> list[tuple[str, str, str, str]]:
    """Parse `pair_id, path_a, path_b, modality_tag` lines.

    Blank lines and `#` comments are ignored; relative paths resolve
    against the manifest's directory.
    """
    if not os.path.exists(path):
        raise DataError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 4:
                raise DataError(
                    f"{path}:{lineno}: expected 'pair_id, path_a, path_b, "
                    f"modality_tag', got {line!r}"
                )
            pair_id, path_a, path_b, tag = parts
            if tag not in MODALITY_TAGS:
                raise DataError(
                    f"{path}:{lineno}: unknown modality tag {tag!r} "
                    f"(expected one of {MODALITY_TAGS})"
                )
            entries.append(
                (pair_id, os.path.join(base, path_a), os.path.join(base, path_b), tag)
            )
    return entries


def load_pairs(manifest_path: str) -> list[ImagePair]:
    """Load every manifest entry; color functional images contribute their Y channel."""
    pairs = []
    for pair_id, path_a, path_b, tag in read_manifest(manifest_path):
        a = load_image(path_a)
        b = load_image(path_b)
        if a.ndim == 3:
            a = np.clip(rgb_to_yuv(a)[0], 0.0, 1.0)
        if b.ndim == 3:
            b = np.clip(rgb_to_yuv(b)[0], 0.0, 1.0)
        try:
            pairs.append(ImagePair(a, b, tag, pair_id))
        except (DimensionError, ValidationError) as exc:
            raise DataError(f"pair {pair_id!r}: {exc}") from exc
    return pairs
