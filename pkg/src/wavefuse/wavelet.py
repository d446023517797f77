"""Single-level 2D orthonormal Haar wavelet analysis and synthesis.

Arrays are channel-last: 2D maps of shape (H, W) or stacks of shape
(H, W, C).  The transform is applied independently per channel.  With the
orthonormal Haar filters and even spatial dimensions the analysis/synthesis
pair is exact (perfect reconstruction at float64 rounding error), energy is
preserved, and no boundary extension is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError

__all__ = [
    "Subbands",
    "dwt2",
    "idwt2",
    "lowpass_component",
    "highpass_component",
    "pad_to_even",
]


@dataclass(frozen=True)
class Subbands:
    """The four half-resolution subbands of a single-level 2D Haar transform.

    ``ll`` is the lowpass approximation; ``lh`` (row-direction detail),
    ``hl`` (column-direction detail) and ``hh`` (diagonal detail) carry the
    highpass content.  All four share the shape (H/2, W/2[, C]).
    """

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray
    source_height: int
    source_width: int

    def __post_init__(self):
        shape = self.ll.shape
        for name in ("lh", "hl", "hh"):
            if getattr(self, name).shape != shape:
                raise DimensionError(
                    f"subband {name!r} has shape {getattr(self, name).shape}, "
                    f"expected {shape}"
                )
        if (self.source_height, self.source_width) != (2 * shape[0], 2 * shape[1]):
            raise DimensionError(
                f"source size {self.source_height}x{self.source_width} does not "
                f"match subband shape {shape}"
            )


def _check_map(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (2, 3):
        raise DimensionError(f"expected a (H, W) or (H, W, C) array, got ndim={x.ndim}")
    if x.shape[0] < 2 or x.shape[1] < 2:
        raise DimensionError(f"spatial dimensions must be >= 2, got {x.shape[:2]}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("input contains non-finite values")
    return x


def dwt2(x: np.ndarray) -> Subbands:
    """Decompose a map into its four Haar subbands.

    Requires even H and W (use :func:`pad_to_even` first for odd sizes).
    """
    x = _check_map(x)
    h, w = x.shape[:2]
    if h % 2 or w % 2:
        raise DimensionError(f"spatial dimensions must be even, got {h}x{w}")
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    return Subbands(
        ll=(a + b + c + d) / 2.0,
        lh=(a + b - c - d) / 2.0,
        hl=(a - b + c - d) / 2.0,
        hh=(a - b - c + d) / 2.0,
        source_height=h,
        source_width=w,
    )


def idwt2(s: Subbands) -> np.ndarray:
    """Reconstruct the full-resolution map from its subbands."""
    ll, lh, hl, hh = s.ll, s.lh, s.hl, s.hh
    out = np.empty((s.source_height, s.source_width) + ll.shape[2:], dtype=np.float64)
    out[0::2, 0::2] = (ll + lh + hl + hh) / 2.0
    out[0::2, 1::2] = (ll + lh - hl - hh) / 2.0
    out[1::2, 0::2] = (ll - lh + hl - hh) / 2.0
    out[1::2, 1::2] = (ll - lh - hl + hh) / 2.0
    return out


def lowpass_component(s: Subbands) -> np.ndarray:
    """Full-resolution smooth component: synthesis with the detail bands zeroed."""
    z = np.zeros_like(s.ll)
    return idwt2(Subbands(s.ll, z, z, z, s.source_height, s.source_width))


def highpass_component(s: Subbands) -> np.ndarray:
    """Full-resolution detail component: synthesis with the LL band zeroed."""
    z = np.zeros_like(s.ll)
    return idwt2(Subbands(z, s.lh, s.hl, s.hh, s.source_height, s.source_width))


def pad_to_even(x: np.ndarray) -> np.ndarray:
    """Symmetric-pad the spatial dimensions to even sizes.

    Convenience for standalone use of the transform; inside the fusion
    network even sizes are guaranteed by the input-size contract.
    """
    x = _check_map(x)
    pad_h = x.shape[0] % 2
    pad_w = x.shape[1] % 2
    if not (pad_h or pad_w):
        return x
    widths = [(0, pad_h), (0, pad_w)] + [(0, 0)] * (x.ndim - 2)
    return np.pad(x, widths, mode="symmetric")
