"""Nine no-reference / source-referenced fusion quality metrics.

Every metric first quantizes its inputs to 256 gray levels
(round(255 * clip(x, 0, 1))) and works on that level scale, so magnitudes
match the conventional 8-bit formulations.  The frozen parameter choices
(kernels, window sizes, sigmoid constants, scale counts) are documented in
docs/METRICS.md.

All functions are pure; `evaluate_all` bundles the nine values plus a
caller-supplied runtime into a `MetricReport`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.signal import convolve2d

from .errors import DimensionError, ValidationError

__all__ = [
    "MetricReport",
    "entropy",
    "std_dev",
    "spatial_frequency",
    "q_abf",
    "mutual_information_metric",
    "q_c",
    "q_y",
    "scd",
    "viff",
    "evaluate_all",
    "write_report_csv",
    "read_report_csv",
    "CSV_COLUMNS",
]

GRAY_LEVELS = 256

# Edge-transfer sigmoid constants (strength / orientation), normalized so a
# perfect transfer scores exactly 1.
QABF_GAMMA_G, QABF_KAPPA_G, QABF_DELTA_G = 0.9994, -15.0, 0.5
QABF_GAMMA_A, QABF_KAPPA_A, QABF_DELTA_A = 0.9879, -22.0, 0.8

# Windowed-SSIM constants for the block-wise metrics, on the 0..255 scale.
SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2
QY_SIMILARITY_THRESHOLD = 0.75

VIFF_SCALES = 4
VIFF_NOISE_VARIANCE = 2.0
_EPS = 1e-10

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T

CSV_COLUMNS = (
    "pair_id", "en", "sd", "sf", "q_abf", "mi", "q_c", "q_y", "scd", "viff",
    "runtime_s",
)


@dataclass(frozen=True)
class MetricReport:
    """The nine fusion metrics for one pair, plus fusion wall-clock time."""

    en: float
    sd: float
    sf: float
    q_abf: float
    mi: float
    q_c: float
    q_y: float
    scd: float
    viff: float
    runtime_seconds: float = 0.0

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))


def _as_levels(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"expected a 2D image, got ndim={img.ndim}")
    if img.size == 0:
        raise ValidationError("image is empty")
    if not np.all(np.isfinite(img)):
        raise ValidationError("image contains non-finite values")
    return np.round(255.0 * np.clip(img, 0.0, 1.0))


def _as_level_triple(f, a, b):
    f = _as_levels(f)
    a = _as_levels(a)
    b = _as_levels(b)
    if not (f.shape == a.shape == b.shape):
        raise DimensionError(
            f"image shapes differ: f={f.shape}, a={a.shape}, b={b.shape}"
        )
    return f, a, b


def entropy(f: np.ndarray) -> float:
    """Shannon entropy (bits) of the 256-bin gray-level histogram."""
    levels = _as_levels(f)
    counts = np.bincount(levels.astype(np.int64).ravel(), minlength=GRAY_LEVELS)
    p = counts / levels.size
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)) + 0.0)  # +0.0 normalizes -0.0


def std_dev(f: np.ndarray) -> float:
    """Population standard deviation over gray levels."""
    return float(np.std(_as_levels(f)))


def spatial_frequency(f: np.ndarray) -> float:
    """Root of summed squared RMS first differences along rows and columns."""
    levels = _as_levels(f)
    rf = np.mean(np.diff(levels, axis=1) ** 2)
    cf = np.mean(np.diff(levels, axis=0) ** 2)
    return float(np.sqrt(rf + cf))


def _sobel_edges(levels: np.ndarray):
    # Symmetric padding: a constant image has zero gradient everywhere, so
    # the picture boundary cannot masquerade as a transferred edge.
    padded = np.pad(levels, 1, mode="symmetric")
    gx = convolve2d(padded, _SOBEL_X, mode="valid")
    gy = convolve2d(padded, _SOBEL_Y, mode="valid")
    strength = np.sqrt(gx**2 + gy**2)
    angle = np.where(gx == 0.0, math.pi / 2.0, np.arctan(np.divide(
        gy, gx, out=np.zeros_like(gy), where=gx != 0.0)))
    return strength, angle


def _edge_sigmoid(x, gamma, kappa, delta):
    raw = gamma / (1.0 + np.exp(kappa * (x - delta)))
    saturation = gamma / (1.0 + math.exp(kappa * (1.0 - delta)))
    return raw / saturation


def _edge_preservation(g_src, a_src, g_fused, a_fused):
    g_max = np.maximum(g_src, g_fused)
    g_min = np.minimum(g_src, g_fused)
    with np.errstate(invalid="ignore"):
        strength_ratio = np.where(g_max > 0.0, g_min / g_max, 1.0)
    angle_match = 1.0 - np.abs(a_src - a_fused) / (math.pi / 2.0)
    q_strength = _edge_sigmoid(strength_ratio, QABF_GAMMA_G, QABF_KAPPA_G, QABF_DELTA_G)
    q_angle = _edge_sigmoid(angle_match, QABF_GAMMA_A, QABF_KAPPA_A, QABF_DELTA_A)
    return q_strength * q_angle


def q_abf(f: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Edge-transfer measure: preserved Sobel strength and orientation,
    weighted by source edge strengths."""
    f, a, b = _as_level_triple(f, a, b)
    g_a, ang_a = _sobel_edges(a)
    g_b, ang_b = _sobel_edges(b)
    g_f, ang_f = _sobel_edges(f)
    q_af = _edge_preservation(g_a, ang_a, g_f, ang_f)
    q_bf = _edge_preservation(g_b, ang_b, g_f, ang_f)
    denom = np.sum(g_a + g_b)
    if denom == 0.0:
        return 0.0
    return float(np.sum(q_af * g_a + q_bf * g_b) / denom)


def _mutual_information(x: np.ndarray, y: np.ndarray) -> float:
    joint, _, _ = np.histogram2d(
        x.ravel(), y.ravel(), bins=GRAY_LEVELS,
        range=[[-0.5, 255.5], [-0.5, 255.5]],
    )
    joint /= joint.sum()
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    nz = joint > 0
    rows, cols = np.nonzero(nz)
    return float(np.sum(joint[nz] * np.log2(joint[nz] / (px[rows] * py[cols]))))


def mutual_information_metric(f: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """MI(A, F) + MI(B, F) in bits, from 256-bin joint histograms."""
    f, a, b = _as_level_triple(f, a, b)
    return _mutual_information(a, f) + _mutual_information(b, f)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    coords = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _window_stats(x: np.ndarray, y: np.ndarray, win: np.ndarray):
    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(y, win, mode="valid")
    sxx = convolve2d(x * x, win, mode="valid") - mu_x**2
    syy = convolve2d(y * y, win, mode="valid") - mu_y**2
    sxy = convolve2d(x * y, win, mode="valid") - mu_x * mu_y
    return mu_x, mu_y, sxx, syy, sxy


def _ssim_map(x: np.ndarray, y: np.ndarray, win: np.ndarray):
    mu_x, mu_y, sxx, syy, sxy = _window_stats(x, y, win)
    ssim = ((2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)) / (
        (mu_x**2 + mu_y**2 + SSIM_C1) * (sxx + syy + SSIM_C2)
    )
    return ssim, sxx, syy, sxy


def _check_window_fits(shape):
    if min(shape) < SSIM_WINDOW:
        raise DimensionError(
            f"image {shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )


def _covariance_weight(cov_af: np.ndarray, cov_bf: np.ndarray) -> np.ndarray:
    """Per-window source weight cov_af / (cov_af + cov_bf), clipped to [0, 1].

    Falls back to 0.5 where the denominator is cancellation-dominated
    (e.g. cov_bf ~ -cov_af), keeping the weight symmetric in (a, b) and
    independent of floating-point summation order.
    """
    denom = cov_af + cov_bf
    magnitude = np.abs(cov_af) + np.abs(cov_bf)
    stable = np.abs(denom) > 1e-8 * magnitude
    with np.errstate(invalid="ignore", divide="ignore"):
        lam = np.where(stable, cov_af / np.where(stable, denom, 1.0), 0.5)
    return np.clip(lam, 0.0, 1.0)


def q_c(f: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Block-wise similarity: per-window SSIM blend weighted by each source's
    covariance with the fused image."""
    f, a, b = _as_level_triple(f, a, b)
    _check_window_fits(f.shape)
    win = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    ssim_af, _, _, cov_af = _ssim_map(a, f, win)
    ssim_bf, _, _, cov_bf = _ssim_map(b, f, win)
    lam = _covariance_weight(cov_af, cov_bf)
    sim = lam * ssim_af + (1.0 - lam) * ssim_bf
    return float(np.clip(np.mean(sim), 0.0, 1.0))


def q_y(f: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Saliency-selected structural similarity: variance-weighted SSIM blend
    where the sources agree, best-source SSIM where they do not."""
    f, a, b = _as_level_triple(f, a, b)
    _check_window_fits(f.shape)
    win = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    ssim_ab, saa, sbb, _ = _ssim_map(a, b, win)
    ssim_af, _, _, _ = _ssim_map(a, f, win)
    ssim_bf, _, _, _ = _ssim_map(b, f, win)
    saa = np.maximum(saa, 0.0)
    sbb = np.maximum(sbb, 0.0)
    denom = saa + sbb
    lam = np.where(denom > 0.0, saa / np.where(denom > 0.0, denom, 1.0), 0.5)
    blended = lam * ssim_af + (1.0 - lam) * ssim_bf
    selected = np.maximum(ssim_af, ssim_bf)
    q = np.where(ssim_ab >= QY_SIMILARITY_THRESHOLD, blended, selected)
    return float(np.clip(np.mean(q), 0.0, 1.0))


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(np.sum(xc**2) * np.sum(yc**2))
    if denom == 0.0:
        return 0.0
    return float(np.sum(xc * yc) / denom)


def scd(f: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Sum of correlations of differences: r(F-B, A) + r(F-A, B)."""
    f, a, b = _as_level_triple(f, a, b)
    return _pearson(f - b, a) + _pearson(f - a, b)


def _viff_scale_stats(ref: np.ndarray, dist: np.ndarray, win: np.ndarray):
    """Per-window visual information with and without distortion (GSM model)."""
    _, _, s_ref, s_dist, s_cross = _window_stats(ref, dist, win)
    s_ref = np.maximum(s_ref, 0.0)
    s_dist = np.maximum(s_dist, 0.0)
    g = s_cross / (s_ref + _EPS)
    noise = s_dist - g * s_cross
    g[s_ref < _EPS] = 0.0
    noise[s_ref < _EPS] = s_dist[s_ref < _EPS]
    s_ref[s_ref < _EPS] = 0.0
    g[s_dist < _EPS] = 0.0
    noise[s_dist < _EPS] = 0.0
    noise[g < 0.0] = s_dist[g < 0.0]
    g[g < 0.0] = 0.0
    noise[noise <= _EPS] = _EPS
    vid = np.log10(1.0 + g**2 * s_ref / (noise + VIFF_NOISE_VARIANCE))
    vind = np.log10(1.0 + s_ref / VIFF_NOISE_VARIANCE)
    return vid, vind, s_ref


def viff(f: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Visual information fidelity for fusion: per-window fidelity of the
    fused image to each source, saliency-weighted by source variance and
    averaged over the dyadic scales the image supports."""
    f, a, b = _as_level_triple(f, a, b)
    scale_values = []
    for scale in range(1, VIFF_SCALES + 1):
        size = 2 ** (VIFF_SCALES - scale + 1) + 1
        win = _gaussian_kernel(size, size / 5.0)
        if scale > 1:
            if min(a.shape) < size:
                break
            a = convolve2d(a, win, mode="valid")[::2, ::2]
            b = convolve2d(b, win, mode="valid")[::2, ::2]
            f = convolve2d(f, win, mode="valid")[::2, ::2]
        if min(a.shape) < size:
            break
        vid_a, vind_a, w_a = _viff_scale_stats(a, f, win)
        vid_b, vind_b, w_b = _viff_scale_stats(b, f, win)
        numerator = np.sum(w_a * vid_a + w_b * vid_b)
        denominator = np.sum(w_a * vind_a + w_b * vind_b)
        scale_values.append(1.0 if denominator == 0.0 else numerator / denominator)
    if not scale_values:
        raise DimensionError(
            f"image too small for the finest fidelity scale "
            f"({2**VIFF_SCALES + 1} pixels)"
        )
    return float(np.mean(scale_values))


def evaluate_all(f: np.ndarray, a: np.ndarray, b: np.ndarray,
                 elapsed: float = 0.0) -> MetricReport:
    """All nine metrics for one (fused, source_a, source_b) triple."""
    return MetricReport(
        en=entropy(f),
        sd=std_dev(f),
        sf=spatial_frequency(f),
        q_abf=q_abf(f, a, b),
        mi=mutual_information_metric(f, a, b),
        q_c=q_c(f, a, b),
        q_y=q_y(f, a, b),
        scd=scd(f, a, b),
        viff=viff(f, a, b),
        runtime_seconds=float(elapsed),
    )


def write_report_csv(path: str, rows: list[tuple[str, MetricReport]]) -> None:
    """One row per evaluated pair, values at 9 significant digits."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for pair_id, report in rows:
            writer.writerow([pair_id] + [f"{v:.9g}" for v in report.values()])


def read_report_csv(path: str) -> list[tuple[str, MetricReport]]:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValidationError(f"unexpected metric CSV header: {header}")
        rows = []
        for record in reader:
            values = [float(v) for v in record[1:]]
            rows.append((record[0], MetricReport(*values)))
    return rows
