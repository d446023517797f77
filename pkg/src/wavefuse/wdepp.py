"""Wavelet-decomposition edge-preserving pooling (WDEPP).

The layer halves the spatial resolution of a feature map while keeping the
channel count:

    1. split each channel into its full-resolution smooth and detail
       components via a single-level Haar transform (2C channels total);
    2. weight every channel with a squeeze-and-excitation attention factor;
    3. project back to C channels with a 1x1 convolution + ReLU;
    4. 2x2 stride-2 max-pool.

The torch functional core (`wdepp_forward` and friends) operates on NCHW
tensors and is fully differentiable; `WaveletEdgePool` wraps it as a module
for use inside the network.  The array-level functions (`build_feature_set`,
`channel_attention`, `wdepp_pool`) expose the same math on channel-last
float64 numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DimensionError, ValidationError

__all__ = [
    "SqExParams",
    "WdeppParams",
    "WaveletEdgePool",
    "build_feature_set",
    "channel_attention",
    "wdepp_pool",
    "init_wdepp_params",
    "haar_split",
    "haar_merge",
]


def haar_split(x: torch.Tensor):
    """Single-level orthonormal Haar analysis over the last two dimensions.

    Returns (ll, lh, hl, hh), each with halved spatial size.  Requires even
    H and W.
    """
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) / 2.0
    lh = (a + b - c - d) / 2.0
    hl = (a - b + c - d) / 2.0
    hh = (a - b - c + d) / 2.0
    return ll, lh, hl, hh


def haar_merge(ll, lh, hl, hh) -> torch.Tensor:
    """Exact inverse of :func:`haar_split`."""
    a = (ll + lh + hl + hh) / 2.0
    b = (ll + lh - hl - hh) / 2.0
    c = (ll - lh + hl - hh) / 2.0
    d = (ll - lh - hl + hh) / 2.0
    shape = ll.shape[:-2] + (2 * ll.shape[-2], 2 * ll.shape[-1])
    out = torch.empty(shape, dtype=ll.dtype, device=ll.device)
    out[..., 0::2, 0::2] = a
    out[..., 0::2, 1::2] = b
    out[..., 1::2, 0::2] = c
    out[..., 1::2, 1::2] = d
    return out


def feature_set(x: torch.Tensor) -> torch.Tensor:
    """Concatenate full-resolution smooth and detail components (NCHW -> N,2C,H,W)."""
    if x.shape[-2] % 2 or x.shape[-1] % 2:
        raise DimensionError(
            f"spatial dimensions must be even, got {tuple(x.shape[-2:])}"
        )
    ll, lh, hl, hh = haar_split(x)
    zero = torch.zeros_like(ll)
    low = haar_merge(ll, zero, zero, zero)
    high = haar_merge(zero, lh, hl, hh)
    return torch.cat([low, high], dim=-3)


def sqex_weights(f: torch.Tensor, w1, b1, w2, b2) -> torch.Tensor:
    """Squeeze-excitation attention weights for an (N, K, H, W) feature set.

    Global average pool per channel, FC -> ReLU -> FC -> sigmoid.  Returns
    an (N, K) tensor with every entry strictly inside (0, 1).
    """
    squeezed = f.mean(dim=(-2, -1))
    hidden = F.relu(F.linear(squeezed, w1, b1))
    return torch.sigmoid(F.linear(hidden, w2, b2))


def wdepp_forward(x: torch.Tensor, w1, b1, w2, b2, proj_w, proj_b) -> torch.Tensor:
    """Full WDEPP pipeline on an (N, C, H, W) tensor -> (N, C, H/2, W/2)."""
    f = feature_set(x)
    weights = sqex_weights(f, w1, b1, w2, b2)
    f = f * weights[:, :, None, None]
    y = F.relu(F.conv2d(f, proj_w, proj_b))
    return F.max_pool2d(y, kernel_size=2, stride=2)


class WaveletEdgePool(nn.Module):
    """WDEPP as a module: drop-in replacement for a 2x2 stride-2 pool."""

    def __init__(self, channels: int, reduction_ratio: int = 8):
        super().__init__()
        self.channels = channels
        self.reduction_ratio = reduction_ratio
        k = 2 * channels
        hidden = max(k // reduction_ratio, 4)
        self.fc1 = nn.Linear(k, hidden)
        self.fc2 = nn.Linear(hidden, k)
        self.proj = nn.Conv2d(k, channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return wdepp_forward(
            x,
            self.fc1.weight, self.fc1.bias,
            self.fc2.weight, self.fc2.bias,
            self.proj.weight, self.proj.bias,
        )


@dataclass
class SqExParams:
    """Squeeze-excitation parameters for a 2C-channel feature set.

    ``w1``: (hidden, 2C) squeeze weights, ``w2``: (2C, hidden) excite
    weights, with matching bias vectors.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    reduction_ratio: int = 8

    def __post_init__(self):
        hidden, k = self.w1.shape
        if self.w2.shape != (k, hidden):
            raise DimensionError(
                f"excite weights {self.w2.shape} do not mirror squeeze weights "
                f"{self.w1.shape}"
            )
        if self.b1.shape != (hidden,) or self.b2.shape != (k,):
            raise DimensionError("bias shapes do not match the FC weights")
        for arr in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(arr)):
                raise ValidationError("squeeze-excitation parameters must be finite")

    @property
    def feature_channels(self) -> int:
        return self.w1.shape[1]


@dataclass
class WdeppParams:
    """All parameters of one WDEPP site: attention plus the 2C->C projection."""

    sqex: SqExParams
    proj_weight: np.ndarray  # (C, 2C), applied as a 1x1 convolution
    proj_bias: np.ndarray  # (C,)

    def __post_init__(self):
        c_out, c_in = self.proj_weight.shape
        if c_in != self.sqex.feature_channels:
            raise DimensionError(
                f"projection expects {c_in} input channels but the attention "
                f"block produces {self.sqex.feature_channels}"
            )
        if c_in != 2 * c_out:
            raise DimensionError(
                f"projection must map 2C -> C channels, got {c_in} -> {c_out}"
            )
        if self.proj_bias.shape != (c_out,):
            raise DimensionError("projection bias shape mismatch")
        if not (np.all(np.isfinite(self.proj_weight)) and np.all(np.isfinite(self.proj_bias))):
            raise ValidationError("projection parameters must be finite")

    @property
    def channels(self) -> int:
        return self.proj_weight.shape[0]


def init_wdepp_params(channels: int, reduction_ratio: int = 8,
                      rng: np.random.Generator | None = None) -> WdeppParams:
    """Fan-in-scaled uniform weights, zero biases (attention starts near 0.5)."""
    rng = rng or np.random.default_rng()
    k = 2 * channels
    hidden = max(k // reduction_ratio, 4)

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    sqex = SqExParams(
        w1=uniform((hidden, k), k),
        b1=np.zeros(hidden),
        w2=uniform((k, hidden), hidden),
        b2=np.zeros(k),
        reduction_ratio=reduction_ratio,
    )
    return WdeppParams(
        sqex=sqex,
        proj_weight=uniform((channels, k), k),
        proj_bias=np.zeros(channels),
    )


def _to_nchw(x: np.ndarray) -> torch.Tensor:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise DimensionError(f"expected a (H, W) or (H, W, C) array, got ndim={x.ndim}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("input contains non-finite values")
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(x, 2, 0)))[None]


def _to_hwc(t: torch.Tensor) -> np.ndarray:
    return np.moveaxis(t[0].numpy(), 0, 2)


def build_feature_set(x: np.ndarray) -> np.ndarray:
    """(H, W, C) map -> (H, W, 2C) smooth/detail feature set.

    Channels [0, C) hold the lowpass reconstruction of each input channel,
    channels [C, 2C) the highpass reconstruction; the halves sum back to x.
    """
    return _to_hwc(feature_set(_to_nchw(x)))


def channel_attention(f: np.ndarray, p: SqExParams) -> np.ndarray:
    """Attention weight per channel of a (H, W, 2C) feature set, each in (0, 1)."""
    t = _to_nchw(f)
    if t.shape[1] != p.feature_channels:
        raise DimensionError(
            f"feature set has {t.shape[1]} channels, parameters expect "
            f"{p.feature_channels}"
        )
    weights = sqex_weights(
        t,
        torch.from_numpy(p.w1), torch.from_numpy(p.b1),
        torch.from_numpy(p.w2), torch.from_numpy(p.b2),
    )
    return weights[0].numpy()


def wdepp_pool(x: np.ndarray, p: WdeppParams) -> np.ndarray:
    """Edge-preserving pooled map: (H, W, C) -> (H/2, W/2, C), values >= 0."""
    t = _to_nchw(x)
    if t.shape[1] != p.channels:
        raise DimensionError(
            f"input has {t.shape[1]} channels, parameters expect {p.channels}"
        )
    out = wdepp_forward(
        t,
        torch.from_numpy(p.sqex.w1), torch.from_numpy(p.sqex.b1),
        torch.from_numpy(p.sqex.w2), torch.from_numpy(p.sqex.b2),
        torch.from_numpy(p.proj_weight[:, :, None, None]),
        torch.from_numpy(p.proj_bias),
    )
    return _to_hwc(out)
