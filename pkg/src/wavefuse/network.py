"""U-Net autoencoder producing one fused channel from two source channels.

Encoder blocks run two conv3x3-BN-ReLU stacks; the first ``decoder_blocks``
of them are followed by the configured pooling (WDEPP, max or average) and
the deepest block acts as the bottleneck.  The decoder mirrors the encoder
with 2x2 stride-2 transpose convolutions, concatenating each matching
pre-pool encoder activation, and a final 1x1 convolution + sigmoid bounds
the fused output to (0, 1).
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, DataError, DimensionError, ValidationError
from .wdepp import WaveletEdgePool

__all__ = [
    "NetworkConfig",
    "FusionAutoencoder",
    "build_model",
    "forward",
    "parameter_count",
    "backbone_shapes",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
]

POOLING_MODES = ("wdepp", "max", "average")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters; channel widths double per encoder block."""

    base_channels: int = 32
    encoder_blocks: int = 4
    decoder_blocks: int = 3
    input_channels: int = 2
    output_channels: int = 1
    pooling_mode: str = "wdepp"
    reduction_ratio: int = 8

    def __post_init__(self):
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.encoder_blocks != self.decoder_blocks + 1:
            raise ConfigError(
                f"encoder_blocks ({self.encoder_blocks}) must equal "
                f"decoder_blocks + 1 ({self.decoder_blocks + 1})"
            )
        if self.decoder_blocks < 1:
            raise ConfigError("decoder_blocks must be >= 1")
        if self.pooling_mode not in POOLING_MODES:
            raise ConfigError(
                f"pooling_mode must be one of {POOLING_MODES}, got {self.pooling_mode!r}"
            )
        if self.input_channels < 1 or self.output_channels < 1:
            raise ConfigError("channel counts must be positive")

    @property
    def downsample_factor(self) -> int:
        return 2**self.decoder_blocks

    @property
    def encoder_channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * 2**i for i in range(self.encoder_blocks))


class ConvBlock(nn.Module):
    """Two stacked conv3x3 (stride 1, padding 1) + BatchNorm + ReLU layers."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.body(x)


def _make_pool(mode: str, channels: int, reduction_ratio: int) -> nn.Module:
    if mode == "wdepp":
        return WaveletEdgePool(channels, reduction_ratio)
    if mode == "max":
        return nn.MaxPool2d(kernel_size=2, stride=2)
    return nn.AvgPool2d(kernel_size=2, stride=2)


class FusionAutoencoder(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        widths = config.encoder_channels

        self.encoder = nn.ModuleList()
        self.pools = nn.ModuleList()
        in_ch = config.input_channels
        for i, out_ch in enumerate(widths):
            self.encoder.append(ConvBlock(in_ch, out_ch))
            if i < config.decoder_blocks:
                self.pools.append(
                    _make_pool(config.pooling_mode, out_ch, config.reduction_ratio)
                )
            in_ch = out_ch

        self.upsamplers = nn.ModuleList()
        self.decoder = nn.ModuleList()
        for i in reversed(range(config.decoder_blocks)):
            self.upsamplers.append(
                nn.ConvTranspose2d(widths[i + 1], widths[i], kernel_size=2, stride=2)
            )
            self.decoder.append(ConvBlock(2 * widths[i], widths[i]))

        self.head = nn.Conv2d(widths[0], config.output_channels, kernel_size=1)
        self.training_step = 0

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        factor = self.config.downsample_factor
        h, w = x.shape[-2:]
        if h % factor or w % factor:
            raise DimensionError(
                f"spatial dimensions {h}x{w} must be divisible by {factor}"
            )
        skips = []
        for i, block in enumerate(self.encoder):
            x = block(x)
            if i < self.config.decoder_blocks:
                skips.append(x)
                x = self.pools[i](x)
        for up, block, skip in zip(self.upsamplers, self.decoder, reversed(skips)):
            x = up(x)
            x = block(torch.cat([x, skip], dim=1))
        return torch.sigmoid(self.head(x))


def _init_parameters(model: nn.Module, seed: int) -> None:
    generator = torch.Generator().manual_seed(seed)
    for module in model.modules():
        if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
            fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                module.weight.uniform_(-bound, bound, generator=generator)
                if module.bias is not None:
                    module.bias.zero_()
        elif isinstance(module, nn.Linear):
            bound = 1.0 / math.sqrt(module.in_features)
            with torch.no_grad():
                module.weight.uniform_(-bound, bound, generator=generator)
                module.bias.zero_()
        elif isinstance(module, nn.BatchNorm2d):
            with torch.no_grad():
                module.weight.fill_(1.0)
                module.bias.zero_()


def build_model(cfg: NetworkConfig, seed: int,
                dtype: torch.dtype = torch.float32) -> FusionAutoencoder:
    """Construct a model with deterministic, seed-reproducible parameters."""
    model = FusionAutoencoder(cfg)
    _init_parameters(model, seed)
    return model.to(dtype)


def forward(model: FusionAutoencoder, pair: np.ndarray, training: bool = False) -> np.ndarray:
    """Run one (H, W, 2) source pair through the model, returning (H, W).

    ``training`` selects batch statistics in the normalization layers (and
    updates their running statistics); inference mode uses the stored
    running statistics and is deterministic.
    """
    pair = np.asarray(pair, dtype=np.float64)
    if pair.ndim != 3 or pair.shape[2] != model.config.input_channels:
        raise DimensionError(
            f"expected a (H, W, {model.config.input_channels}) array, got {pair.shape}"
        )
    if not np.all(np.isfinite(pair)):
        raise ValidationError("input contains non-finite values")
    if pair.min() < 0.0 or pair.max() > 1.0:
        raise ValidationError("input values must lie in [0, 1]")
    dtype = next(model.parameters()).dtype
    x = torch.from_numpy(np.ascontiguousarray(np.moveaxis(pair, 2, 0)))[None].to(dtype)
    was_training = model.training
    model.train(training)
    try:
        if training:
            out = model(x)
        else:
            with torch.no_grad():
                out = model(x)
    finally:
        model.train(was_training)
    return out[0, 0].detach().numpy().astype(np.float64)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def backbone_shapes(model: FusionAutoencoder) -> dict[str, tuple[int, ...]]:
    """Shapes of all conv/BN/transpose parameters, excluding pooling sites.

    Swapping the pooling mode must leave these untouched, which keeps the
    ablation comparison honest.
    """
    return {
        name: tuple(p.shape)
        for name, p in model.named_parameters()
        if not name.startswith("pools.")
    }


def save_checkpoint(path: str, model: FusionAutoencoder, seed: int | None = None) -> None:
    """Write a versioned checkpoint atomically (write-then-rename)."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "state_dict": model.state_dict(),
        "training_step": int(model.training_step),
        "seed": seed,
    }
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            torch.save(payload, handle)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def load_checkpoint(path: str) -> tuple[FusionAutoencoder, dict]:
    """Load a checkpoint; returns (model, metadata with training_step/seed)."""
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise DataError(
            f"unsupported checkpoint version {version!r} (expected {CHECKPOINT_VERSION})"
        )
    cfg = NetworkConfig(**payload["config"])
    model = FusionAutoencoder(cfg)
    dtype = next(iter(payload["state_dict"].values())).dtype
    model.to(dtype)
    model.load_state_dict(payload["state_dict"])
    model.training_step = int(payload["training_step"])
    model.eval()
    return model, {"training_step": model.training_step, "seed": payload.get("seed")}
