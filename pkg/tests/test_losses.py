"""Tests for the composite intensity/gradient/structure objective."""

import numpy as np
import pytest
import torch

from wavefuse import losses
from wavefuse.errors import DimensionError


def sobel_oracle(img):
    """Explicit-loop Sobel pair with symmetric padding (oracle for gradient_loss)."""
    kx = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
    ky = kx.T
    padded = np.pad(img, 1, mode="symmetric")
    h, w = img.shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            patch = padded[i : i + 3, j : j + 3]
            # cross-correlation, matching conv2d semantics
            gx[i, j] = np.sum(patch * kx)
            gy[i, j] = np.sum(patch * ky)
    return gx, gy


def ssim_oracle_single_scale(x, y):
    """Windowed SSIM mean by explicit loops over valid 11x11 positions."""
    n = losses.WINDOW_SIZE
    coords = np.arange(n) - (n - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * 1.5**2))
    win = np.outer(g, g)
    win /= win.sum()
    h, w = x.shape
    values = []
    for i in range(h - n + 1):
        for j in range(w - n + 1):
            px = x[i : i + n, j : j + n]
            py = y[i : i + n, j : j + n]
            mx = np.sum(win * px)
            my = np.sum(win * py)
            sxx = np.sum(win * px * px) - mx * mx
            syy = np.sum(win * py * py) - my * my
            sxy = np.sum(win * px * py) - mx * my
            lum = (2 * mx * my + losses.SSIM_C1) / (mx * mx + my * my + losses.SSIM_C1)
            cs = (2 * sxy + losses.SSIM_C2) / (sxx + syy + losses.SSIM_C2)
            values.append(lum * cs)
    return float(np.mean(values))


class TestIntensityLoss:
    def test_zero_when_f_is_max(self):
        rng = np.random.default_rng(0)
        a = rng.random((8, 8))
        b = rng.random((8, 8))
        assert losses.intensity_loss(np.maximum(a, b), a, b) == 0.0

    def test_unit_residual(self):
        zero = np.zeros((4, 4))
        assert losses.intensity_loss(np.ones((4, 4)), zero, zero) == pytest.approx(1.0)

    def test_hand_case_quarter(self):
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        b = np.array([[1.0, 0.0], [0.0, 1.0]])
        f = np.full((2, 2), 0.5)
        assert losses.intensity_loss(f, a, b) == pytest.approx(0.25, abs=0)

    def test_symmetric_in_sources(self):
        rng = np.random.default_rng(1)
        f, a, b = rng.random((3, 8, 8))
        assert losses.intensity_loss(f, a, b) == losses.intensity_loss(f, b, a)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            losses.intensity_loss(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 6)))


class TestGradientLoss:
    def test_zero_for_identical_images(self):
        rng = np.random.default_rng(2)
        a = rng.random((8, 8))
        assert losses.gradient_loss(a, a) == 0.0

    def test_zero_for_two_constants(self):
        value = losses.gradient_loss(np.full((6, 6), 0.2), np.full((6, 6), 0.9))
        assert value == pytest.approx(0.0, abs=1e-24)

    def test_ramp_against_sobel_oracle(self):
        f = np.tile(np.linspace(0.0, 1.0, 8), (8, 1))
        a = np.zeros((8, 8))
        gx, gy = sobel_oracle(f)
        expected = np.mean(gx**2 + gy**2)
        assert losses.gradient_loss(f, a) == pytest.approx(expected, rel=1e-12)

    def test_random_against_sobel_oracle(self):
        rng = np.random.default_rng(3)
        f = rng.random((10, 12))
        a = rng.random((10, 12))
        fx, fy = sobel_oracle(f)
        ax, ay = sobel_oracle(a)
        expected = np.mean((fx - ax) ** 2 + (fy - ay) ** 2)
        assert losses.gradient_loss(f, a) == pytest.approx(expected, rel=1e-12)


class TestMsSsim:
    def test_self_similarity(self):
        rng = np.random.default_rng(4)
        for shape in ((16, 16), (33, 47), (64, 64)):
            x = rng.random(shape)
            assert losses.ms_ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_checkerboard_inverse_single_scale_oracle(self):
        # 16x16 supports exactly one scale, so the value must equal the
        # plain windowed SSIM mean computed by the loop oracle.
        x = (np.indices((16, 16)).sum(axis=0) % 2).astype(np.float64)
        y = 1.0 - x
        expected = ssim_oracle_single_scale(x, y)
        got = losses.ms_ssim(x, y)
        assert got == pytest.approx(expected, abs=1e-9)
        assert got < 0.5
        assert expected < 0.0  # anti-correlated structure term

    def test_shift_invariance_at_matched_means(self):
        rng = np.random.default_rng(5)
        x = rng.random((32, 32)) * 0.5
        y = np.rot90(x, 2).copy()  # same histogram, same mean
        base = losses.ms_ssim(x, y)
        shifted = losses.ms_ssim(x + 0.3, y + 0.3)
        assert abs(base - shifted) < 1e-3

    def test_range(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            x = rng.random((24, 24))
            y = rng.random((24, 24))
            v = losses.ms_ssim(x, y)
            assert -1.0 < v <= 1.0

    def test_too_small_rejected(self):
        with pytest.raises(DimensionError):
            losses.ms_ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_scale_count(self):
        assert losses.supported_scales(64, 64) == 3
        assert losses.supported_scales(16, 16) == 1
        assert losses.supported_scales(512, 512) == 5


class TestStructureLoss:
    def test_zero_for_identical_triple(self):
        rng = np.random.default_rng(7)
        a = rng.random((16, 16))
        assert losses.structure_loss(a, a, a) == pytest.approx(0.0, abs=1e-6)

    def test_symmetric_in_sources(self):
        rng = np.random.default_rng(8)
        f, a, b = rng.random((3, 16, 16))
        assert losses.structure_loss(f, a, b) == pytest.approx(
            losses.structure_loss(f, b, a), abs=1e-12
        )

    def test_substitution_identity(self):
        rng = np.random.default_rng(9)
        a = rng.random((16, 16))
        b = rng.random((16, 16))
        expected = 0.5 * (1.0 - losses.ms_ssim(b, a))
        assert losses.structure_loss(a, a, b) == pytest.approx(expected, abs=1e-9)

    def test_nonnegative(self):
        rng = np.random.default_rng(10)
        for _ in range(5):
            f, a, b = rng.random((3, 16, 16))
            v = losses.structure_loss(f, a, b)
            assert 0.0 <= v < 2.0


class TestTotalLoss:
    def test_identical_triple_is_zero(self):
        rng = np.random.default_rng(11)
        a = rng.random((16, 16))
        breakdown = losses.total_loss(a, a, a)
        assert breakdown.intensity == pytest.approx(0.0, abs=1e-9)
        assert breakdown.gradient == pytest.approx(0.0, abs=1e-9)
        assert breakdown.structure == pytest.approx(0.0, abs=1e-6)
        assert breakdown.total == pytest.approx(0.0, abs=1e-6)

    def test_fields_sum_exactly(self):
        rng = np.random.default_rng(12)
        f, a, b = rng.random((3, 16, 16))
        breakdown = losses.total_loss(f, a, b)
        assert breakdown.total == breakdown.intensity + breakdown.gradient + breakdown.structure

    def test_matches_component_functions(self):
        rng = np.random.default_rng(13)
        f, a, b = rng.random((3, 16, 16))
        breakdown = losses.total_loss(f, a, b)
        assert breakdown.intensity == pytest.approx(losses.intensity_loss(f, a, b), abs=1e-12)
        assert breakdown.gradient == pytest.approx(losses.gradient_loss(f, a), abs=1e-12)
        assert breakdown.structure == pytest.approx(losses.structure_loss(f, a, b), abs=1e-12)


class TestGradientIntegrity:
    def test_total_loss_gradient_matches_central_differences(self):
        rng = np.random.default_rng(14)
        f = rng.random((16, 16))
        a = rng.random((16, 16))
        b = rng.random((16, 16))

        ft = torch.from_numpy(f.copy())[None, None].requires_grad_(True)
        at = torch.from_numpy(a)[None, None]
        bt = torch.from_numpy(b)[None, None]
        total, _, _, _ = losses.total_loss_t(ft, at, bt)
        total.backward()
        analytic = ft.grad[0, 0].numpy()

        step = 1e-4
        idxs = rng.choice(f.size, size=40, replace=False)
        for idx in idxs:
            i, j = divmod(int(idx), 16)
            orig = f[i, j]
            f[i, j] = orig + step
            up = losses.total_loss(f, a, b).total
            f[i, j] = orig - step
            down = losses.total_loss(f, a, b).total
            f[i, j] = orig
            numeric = (up - down) / (2 * step)
            scale = max(abs(numeric), abs(analytic[i, j]), 1e-8)
            assert abs(numeric - analytic[i, j]) / scale < 1e-3
