"""Tests for the single-level Haar analysis/synthesis module."""

import numpy as np
import pytest

from wavefuse import wavelet
from wavefuse.errors import DimensionError, ValidationError

INV_SQRT2 = 1.0 / np.sqrt(2.0)


def filter_bank_oracle(x):
    """Direct separable filter-bank + downsample reference for dwt2.

    Convolves rows then columns with the orthonormal Haar taps anchored on
    even positions, by explicit loops.  Deliberately independent of the
    vectorized implementation under test.
    """
    lo = np.array([INV_SQRT2, INV_SQRT2])
    hi = np.array([INV_SQRT2, -INV_SQRT2])
    h, w = x.shape
    row_lo = np.zeros((h, w // 2))
    row_hi = np.zeros((h, w // 2))
    for i in range(h):
        for k in range(w // 2):
            pair = x[i, 2 * k : 2 * k + 2]
            row_lo[i, k] = np.dot(lo, pair)
            row_hi[i, k] = np.dot(hi, pair)
    out = {}
    for name, rows in (("l", row_lo), ("h", row_hi)):
        col_lo = np.zeros((h // 2, w // 2))
        col_hi = np.zeros((h // 2, w // 2))
        for j in range(w // 2):
            for k in range(h // 2):
                pair = rows[2 * k : 2 * k + 2, j]
                col_lo[k, j] = np.dot(lo, pair)
                col_hi[k, j] = np.dot(hi, pair)
        out["l" + name] = col_lo
        out["h" + name] = col_hi
    # first letter = column (row-index) direction, second = row direction
    return out["ll"], out["hl"], out["lh"], out["hh"]


def ramp_image(n=4):
    img = np.add.outer(np.arange(n), np.arange(n)).astype(np.float64)
    return img / img.max()


def checkerboard(n=4):
    return np.indices((n, n)).sum(axis=0) % 2.0


class TestDwt2:
    def test_constant_image(self):
        c = 0.37
        s = wavelet.dwt2(np.full((2, 2), c))
        assert s.ll.shape == (1, 1)
        np.testing.assert_allclose(s.ll, 2 * c, atol=1e-12)
        for band in (s.lh, s.hl, s.hh):
            np.testing.assert_allclose(band, 0.0, atol=1e-12)

    def test_perfect_reconstruction_random(self):
        rng = np.random.default_rng(7)
        x = rng.random((64, 64, 8))
        rec = wavelet.idwt2(wavelet.dwt2(x))
        assert np.max(np.abs(rec - x)) < 1e-6

    def test_ramp_matches_filter_bank_oracle(self):
        x = ramp_image(4)
        s = wavelet.dwt2(x)
        ll, lh, hl, hh = filter_bank_oracle(x)
        np.testing.assert_allclose(s.ll, ll, atol=1e-12)
        np.testing.assert_allclose(s.lh, lh, atol=1e-12)
        np.testing.assert_allclose(s.hl, hl, atol=1e-12)
        np.testing.assert_allclose(s.hh, hh, atol=1e-12)

    def test_odd_dimensions_rejected(self):
        with pytest.raises(DimensionError):
            wavelet.dwt2(np.zeros((5, 4)))
        with pytest.raises(DimensionError):
            wavelet.dwt2(np.zeros((4, 6, 3))[:, :5])

    def test_non_finite_rejected(self):
        x = np.zeros((4, 4))
        x[1, 2] = np.nan
        with pytest.raises(ValidationError):
            wavelet.dwt2(x)
        x[1, 2] = np.inf
        with pytest.raises(ValidationError):
            wavelet.dwt2(x)

    def test_tiny_inputs_rejected(self):
        with pytest.raises(DimensionError):
            wavelet.dwt2(np.zeros((1, 4)))


class TestIdwt2:
    def test_zero_subbands_give_zero_map(self):
        z = np.zeros((3, 3))
        s = wavelet.Subbands(z, z, z, z, 6, 6)
        np.testing.assert_array_equal(wavelet.idwt2(s), np.zeros((6, 6)))

    def test_oracle_subbands_reconstruct_ramp(self):
        x = ramp_image(4)
        ll, lh, hl, hh = filter_bank_oracle(x)
        s = wavelet.Subbands(ll, lh, hl, hh, 4, 4)
        np.testing.assert_allclose(wavelet.idwt2(s), x, atol=1e-6)

    def test_subband_shape_mismatch_rejected(self):
        z = np.zeros((2, 2))
        with pytest.raises(DimensionError):
            wavelet.Subbands(z, z, np.zeros((2, 3)), z, 4, 4)
        with pytest.raises(DimensionError):
            wavelet.Subbands(z, z, z, z, 4, 6)


class TestComponents:
    def test_constant_image_is_pure_lowpass(self):
        x = np.full((6, 8), 0.25)
        s = wavelet.dwt2(x)
        np.testing.assert_allclose(wavelet.lowpass_component(s), x, atol=1e-12)
        np.testing.assert_allclose(wavelet.highpass_component(s), 0.0, atol=1e-12)

    def test_components_sum_to_reconstruction(self):
        rng = np.random.default_rng(11)
        x = rng.random((16, 12, 4))
        s = wavelet.dwt2(x)
        total = wavelet.lowpass_component(s) + wavelet.highpass_component(s)
        assert np.max(np.abs(total - wavelet.idwt2(s))) < 1e-6

    def test_checkerboard_lowpass_is_half(self):
        x = checkerboard(4)
        s = wavelet.dwt2(x)
        np.testing.assert_allclose(wavelet.lowpass_component(s), 0.5, atol=1e-12)
        np.testing.assert_allclose(
            wavelet.highpass_component(s), x - 0.5, atol=1e-12
        )

    def test_energy_split(self):
        rng = np.random.default_rng(13)
        x = rng.random((32, 32, 2))
        s = wavelet.dwt2(x)
        low = wavelet.lowpass_component(s)
        high = wavelet.highpass_component(s)
        assert abs(np.sum(low**2) + np.sum(high**2) - np.sum(x**2)) < 1e-5


class TestProperties:
    def test_perfect_reconstruction_many_shapes(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            h = 2 * int(rng.integers(1, 33))
            w = 2 * int(rng.integers(1, 33))
            c = int(rng.integers(1, 9))
            x = rng.random((h, w, c))
            rec = wavelet.idwt2(wavelet.dwt2(x))
            assert np.max(np.abs(rec - x)) < 1e-6

    def test_channel_independence(self):
        rng = np.random.default_rng(5)
        x = rng.random((8, 8, 3))
        stacked = wavelet.dwt2(x)
        for ch in range(3):
            single = wavelet.dwt2(x[:, :, ch])
            np.testing.assert_allclose(stacked.ll[:, :, ch], single.ll, atol=1e-12)
            np.testing.assert_allclose(stacked.hh[:, :, ch], single.hh, atol=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(6)
        x = rng.random((10, 14))
        y = rng.random((10, 14))
        a, b = 1.7, -0.4
        s_combo = wavelet.dwt2(a * x + b * y)
        s_x = wavelet.dwt2(x)
        s_y = wavelet.dwt2(y)
        for band in ("ll", "lh", "hl", "hh"):
            np.testing.assert_allclose(
                getattr(s_combo, band),
                a * getattr(s_x, band) + b * getattr(s_y, band),
                atol=1e-6,
            )


class TestPadToEven:
    def test_pads_odd_dims_symmetrically(self):
        x = np.arange(15, dtype=np.float64).reshape(3, 5)
        padded = wavelet.pad_to_even(x)
        assert padded.shape == (4, 6)
        np.testing.assert_array_equal(padded[3], padded[2])
        np.testing.assert_array_equal(padded[:, 5], padded[:, 4])

    def test_even_input_unchanged(self):
        x = np.ones((4, 6))
        np.testing.assert_array_equal(wavelet.pad_to_even(x), x)
