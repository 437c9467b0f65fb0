"""Single-frame pre-denoiser: a small encoder/decoder with skips.

Runs ahead of patch matching and flow estimation so that both operate on
cleaner signal; the final patch prediction is also a residual over this
output. Two pooling levels, so frame extents must divide by 4.
"""

from __future__ import annotations

from .config import ModelConfig
from .errors import DimensionError
from .layers import conv, register_conv
from .tensor import ParamSet, avg_pool2, concat, upsample2


def register_predenoise(params: ParamSet, cfg: ModelConfig, rng):
    C, wdt = cfg.channels, cfg.pre_width
    register_conv(params, "pre.enc0a", C, wdt, 3, rng)
    register_conv(params, "pre.enc0b", wdt, wdt, 3, rng)
    register_conv(params, "pre.enc1a", wdt, 2 * wdt, 3, rng)
    register_conv(params, "pre.enc1b", 2 * wdt, 2 * wdt, 3, rng)
    register_conv(params, "pre.bota", 2 * wdt, 4 * wdt, 3, rng)
    register_conv(params, "pre.botb", 4 * wdt, 4 * wdt, 3, rng)
    register_conv(params, "pre.dec1a", 4 * wdt, 2 * wdt, 3, rng)
    register_conv(params, "pre.dec1b", 4 * wdt, 2 * wdt, 3, rng)
    register_conv(params, "pre.dec0a", 2 * wdt, wdt, 3, rng)
    register_conv(params, "pre.dec0b", 2 * wdt, wdt, 3, rng)
    register_conv(params, "pre.out", wdt, C, 3, rng)


def predenoise(frame, params: ParamSet, cfg: ModelConfig):
    """Denoise one frame [C,H,W] -> [C,H,W] (residual prediction)."""
    C, H, W = frame.shape
    div = 2 ** cfg.pre_depth
    if H % div or W % div:
        raise DimensionError(f"frame extents {H}x{W} must divide by {div}")
    x = frame.reshape(1, C, H, W)
    e0 = conv(params, "pre.enc0b", conv(params, "pre.enc0a", x).relu()).relu()
    e1 = conv(params, "pre.enc1b", conv(params, "pre.enc1a", avg_pool2(e0)).relu()).relu()
    b = conv(params, "pre.botb", conv(params, "pre.bota", avg_pool2(e1)).relu()).relu()
    d1 = conv(params, "pre.dec1a", upsample2(b)).relu()
    d1 = conv(params, "pre.dec1b", concat([d1, e1], axis=1)).relu()
    d0 = conv(params, "pre.dec0a", upsample2(d1)).relu()
    d0 = conv(params, "pre.dec0b", concat([d0, e0], axis=1)).relu()
    out = x + conv(params, "pre.out", d0)
    return out.reshape(C, H, W)
