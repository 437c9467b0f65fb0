"""PSNR, SSIM and correlation against direct-formula oracles."""

import math

import numpy as np
import pytest

from cascade_denoiser.errors import DimensionError, ParameterError
from cascade_denoiser.metrics import (SSIM_K1, SSIM_K2, SSIM_WINDOW, pearson,
                                      psnr, ssim)


def test_psnr_identical_is_inf():
    a = np.random.default_rng(0).uniform(0, 1, (1, 8, 8))
    assert math.isinf(psnr(a, a.copy()))


def test_psnr_mse_equals_peak_squared_is_zero_db():
    a = np.zeros((1, 4, 4))
    b = np.ones((1, 4, 4))
    assert psnr(a, b, peak=1.0) == pytest.approx(0.0, abs=1e-12)


def test_psnr_constant_error_20db():
    a = np.full((1, 10, 10), 0.3)
    b = a + 0.1
    assert psnr(a, b, peak=1.0) == pytest.approx(20.0, rel=1e-12)


def test_psnr_symmetric():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(0, 1, (2, 1, 6, 6))
    assert psnr(a, b) == pytest.approx(psnr(b, a), rel=1e-15)


def _ssim_oracle(a, b):
    # direct sliding-window evaluation of the local SSIM formula
    k = SSIM_WINDOW
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    H, W = a.shape
    vals = []
    for i in range(H - k + 1):
        for j in range(W - k + 1):
            wa = a[i:i + k, j:j + k]
            wb = b[i:i + k, j:j + k]
            mu_a, mu_b = wa.mean(), wb.mean()
            va = (wa ** 2).mean() - mu_a ** 2
            vb = (wb ** 2).mean() - mu_b ** 2
            cov = (wa * wb).mean() - mu_a * mu_b
            vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                        / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_identical_is_one():
    a = np.random.default_rng(2).uniform(0, 1, (12, 12))
    assert ssim(a, a.copy()) == pytest.approx(1.0, abs=1e-12)


def test_ssim_negation_below_one():
    a = np.random.default_rng(3).uniform(0, 1, (16, 16))
    assert ssim(a, 1.0 - a) < 1.0


def test_ssim_matches_direct_oracle():
    rng = np.random.default_rng(4)
    a = rng.uniform(0, 1, (14, 11))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(_ssim_oracle(a, b), abs=1e-10)


def test_ssim_symmetric_and_projects_channels():
    rng = np.random.default_rng(5)
    a = rng.uniform(0, 1, (3, 10, 10))
    b = rng.uniform(0, 1, (3, 10, 10))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-14)
    assert ssim(a, b) == pytest.approx(ssim(a.mean(axis=0), b.mean(axis=0)), abs=1e-14)


def test_ssim_too_small_errors():
    with pytest.raises(DimensionError, match="window"):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)))


def test_pearson_exact_lines():
    x = np.array([0.0, 1.0, 2.0, 5.0])
    assert pearson(x, 2 * x + 3) == pytest.approx(1.0, abs=1e-14)
    assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-14)


def test_pearson_hand_computed_five_points():
    x = [1.0, 2.0, 3.0, 4.0, 5.0]
    y = [2.0, 1.0, 4.0, 3.0, 5.0]
    # hand calculation: cov = 2.0, sx^2 = 10, sy^2 = 10 (centered sums)
    assert pearson(x, y) == pytest.approx(8.0 / 10.0, abs=1e-12)


def test_pearson_affine_invariance():
    rng = np.random.default_rng(6)
    x = rng.uniform(0, 1, 20)
    y = rng.uniform(0, 1, 20)
    r = pearson(x, y)
    assert pearson(3.0 * x + 1.0, y) == pytest.approx(r, abs=1e-12)
    assert pearson(x, 0.5 * y - 2.0) == pytest.approx(r, abs=1e-12)


def test_pearson_zero_variance_errors():
    with pytest.raises(ParameterError, match="variance"):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
