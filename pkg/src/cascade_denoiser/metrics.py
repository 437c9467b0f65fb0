"""Image quality metrics and the error-uncertainty correlation statistic."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParameterError
from .tensor import Tensor

SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _arr(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def psnr(a, b, peak=1.0):
    """10*log10(peak^2 / MSE) in dB; identical inputs report +inf."""
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise DimensionError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ParameterError(f"peak must be > 0, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(a, b):
    """Mean local SSIM over sliding 8x8 uniform windows, peak 1.

    Inputs are projected to grayscale (channel mean) first; statistics are
    biased (divide by n). Stabilizers are the standard K1=0.01, K2=0.03.
    """
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise DimensionError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a.mean(axis=0), b.mean(axis=0)
    if a.ndim != 2:
        raise DimensionError(f"ssim expects [H,W] or [C,H,W], got rank {a.ndim}")
    H, W = a.shape
    k = SSIM_WINDOW
    if H < k or W < k:
        raise DimensionError(f"image {H}x{W} smaller than the {k}x{k} ssim window")
    wa = sliding_window_view(a, (k, k))
    wb = sliding_window_view(b, (k, k))
    mu_a = wa.mean(axis=(2, 3))
    mu_b = wb.mean(axis=(2, 3))
    var_a = (wa * wa).mean(axis=(2, 3)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(2, 3)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(2, 3)) - mu_a * mu_b
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / \
        ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    return float(s.mean())


def pearson(x, y):
    """Product-moment correlation of two equally long samples."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise DimensionError(f"need two equal 1-D samples, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ParameterError(f"need at least 2 points, got {x.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    vx = float((xc * xc).sum())
    vy = float((yc * yc).sum())
    if vx == 0.0 or vy == 0.0:
        raise ParameterError("correlation undefined: an input has zero variance")
    return float((xc * yc).sum() / math.sqrt(vx * vy))
