"""Composite training objective: intensity + gradient + structure.

The three terms pull the fused image toward the pixelwise maximum of the
sources, toward the gradient field of the first source (the MR image by
convention), and toward multi-scale structural similarity with both
sources; the total is their unweighted sum.

Tensor-level functions (`*_t`) operate on (N, 1, H, W) torch tensors and
are differentiable; they are what the training loop consumes.  The
array-level functions accept single (H, W) float64 numpy images and return
plain floats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DimensionError

__all__ = [
    "LossBreakdown",
    "intensity_loss",
    "gradient_loss",
    "ms_ssim",
    "structure_loss",
    "total_loss",
    "intensity_loss_t",
    "gradient_loss_t",
    "ms_ssim_t",
    "structure_loss_t",
    "total_loss_t",
    "sobel_gradients_t",
    "supported_scales",
    "SSIM_C1",
    "SSIM_C2",
    "MS_SSIM_WEIGHTS",
    "WINDOW_SIZE",
]

# SSIM stabilizers on the [0, 1] dynamic range.
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
# Canonical five-scale weights; truncated to the scales the image supports
# and renormalized.
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term values of one objective evaluation; total is their exact sum."""

    intensity: float
    gradient: float
    structure: float
    total: float


def _gaussian_window(dtype, device) -> torch.Tensor:
    coords = torch.arange(WINDOW_SIZE, dtype=dtype, device=device)
    coords = coords - (WINDOW_SIZE - 1) / 2.0
    g = torch.exp(-(coords**2) / (2.0 * WINDOW_SIGMA**2))
    kernel = g[:, None] * g[None, :]
    kernel = kernel / kernel.sum()
    return kernel[None, None]


def intensity_loss_t(f: torch.Tensor, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return ((f - torch.maximum(a, b)) ** 2).mean()


def sobel_gradients_t(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Horizontal and vertical Sobel responses with symmetric boundary padding."""
    kx = _SOBEL_X.to(dtype=x.dtype, device=x.device)[None, None]
    ky = kx.transpose(-2, -1)
    padded = F.pad(x, (1, 1, 1, 1), mode="replicate")
    return F.conv2d(padded, kx), F.conv2d(padded, ky)


def gradient_loss_t(f: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
    fx, fy = sobel_gradients_t(f)
    ax, ay = sobel_gradients_t(a)
    return ((fx - ax) ** 2 + (fy - ay) ** 2).mean()


def supported_scales(height: int, width: int) -> int:
    """Deepest dyadic scale count at which the SSIM window still fits."""
    scales = 0
    size = min(height, width)
    while size >= WINDOW_SIZE and scales < len(MS_SSIM_WEIGHTS):
        scales += 1
        size //= 2
    return scales


def _ssim_terms(x: torch.Tensor, y: torch.Tensor, window: torch.Tensor):
    mu_x = F.conv2d(x, window)
    mu_y = F.conv2d(y, window)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    sigma_xx = F.conv2d(x * x, window) - mu_xx
    sigma_yy = F.conv2d(y * y, window) - mu_yy
    sigma_xy = F.conv2d(x * y, window) - mu_xy
    cs = (2 * sigma_xy + SSIM_C2) / (sigma_xx + sigma_yy + SSIM_C2)
    luminance = (2 * mu_xy + SSIM_C1) / (mu_xx + mu_yy + SSIM_C1)
    return (luminance * cs).mean(), cs.mean()


def _signed_pow(value: torch.Tensor, exponent: float) -> torch.Tensor:
    # Keeps the sign of a (possibly negative) mean similarity under the
    # fractional scale exponent instead of producing NaN.
    return torch.sign(value) * torch.abs(value) ** exponent


def ms_ssim_t(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Multi-scale structural similarity of two (N, 1, H, W) tensors in (-1, 1]."""
    h, w = x.shape[-2:]
    scales = supported_scales(h, w)
    if scales == 0:
        raise DimensionError(
            f"image {h}x{w} is smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} window"
        )
    weights = torch.tensor(
        MS_SSIM_WEIGHTS[:scales], dtype=x.dtype, device=x.device
    )
    weights = weights / weights.sum()
    window = _gaussian_window(x.dtype, x.device)
    result = torch.ones((), dtype=x.dtype, device=x.device)
    for level in range(scales):
        ssim_mean, cs_mean = _ssim_terms(x, y, window)
        if level < scales - 1:
            result = result * F.relu(cs_mean) ** weights[level]
            x = F.avg_pool2d(x, kernel_size=2)
            y = F.avg_pool2d(y, kernel_size=2)
        else:
            result = result * _signed_pow(ssim_mean, weights[level].item())
    return result


def structure_loss_t(f: torch.Tensor, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return 1.0 - 0.5 * (ms_ssim_t(a, f) + ms_ssim_t(b, f))


def total_loss_t(f: torch.Tensor, a: torch.Tensor, b: torch.Tensor):
    """Returns (total, intensity, gradient, structure) scalar tensors."""
    intensity = intensity_loss_t(f, a, b)
    gradient = gradient_loss_t(f, a)
    structure = structure_loss_t(f, a, b)
    return intensity + gradient + structure, intensity, gradient, structure


def _as_batch(*images: np.ndarray) -> list[torch.Tensor]:
    shape = np.asarray(images[0]).shape
    tensors = []
    for img in images:
        img = np.asarray(img, dtype=np.float64)
        if img.ndim != 2:
            raise DimensionError(f"expected a 2D image, got ndim={img.ndim}")
        if img.shape != shape:
            raise DimensionError(f"image shapes differ: {img.shape} vs {shape}")
        tensors.append(torch.from_numpy(np.ascontiguousarray(img))[None, None])
    return tensors


def intensity_loss(f: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared deviation of f from the pixelwise max of the sources."""
    ft, at, bt = _as_batch(f, a, b)
    return float(intensity_loss_t(ft, at, bt))


def gradient_loss(f: np.ndarray, a: np.ndarray) -> float:
    """Mean squared Sobel-gradient deviation of f from a (the MR source)."""
    ft, at = _as_batch(f, a)
    return float(gradient_loss_t(ft, at))


def ms_ssim(x: np.ndarray, y: np.ndarray) -> float:
    xt, yt = _as_batch(x, y)
    return float(ms_ssim_t(xt, yt))


def structure_loss(f: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ft, at, bt = _as_batch(f, a, b)
    return float(structure_loss_t(ft, at, bt))


def total_loss(f: np.ndarray, a: np.ndarray, b: np.ndarray) -> LossBreakdown:
    ft, at, bt = _as_batch(f, a, b)
    _, intensity, gradient, structure = total_loss_t(ft, at, bt)
    i, g, s = float(intensity), float(gradient), float(structure)
    return LossBreakdown(intensity=i, gradient=g, structure=s, total=i + g + s)
