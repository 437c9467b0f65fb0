"""Iterative refinement of the alignment between matched patches.

Feature and context encoders work at half patch resolution. An all-pairs
inner-product volume over the two feature maps is pooled into a 4-level
pyramid; a lookup operator samples a (2r+1)^2 neighborhood of every
level around the flow-displaced position, and a convolutional GRU with a
small flow head emits corrections. GRU weights are shared across
iterations, so the parameter count does not depend on the iteration
budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import CORR_LEVELS, ModelConfig
from .errors import DimensionError, ParameterError
from .layers import conv, register_conv
from .tensor import ParamSet, Tensor, avg_pool2, bilinear_sample, concat, matmul


@dataclass
class FlowField:
    """Per-pixel (x, y) displacement at feature resolution."""
    flow: Tensor  # [2, h, w]
    iteration: int


@dataclass
class CorrelationPyramid:
    """All-pairs correlation slices; level k pools the target axes 2^(k-1)x.

    levels[k] has shape [h*w, 1, h/2^k', w/2^k'] with one batch row per
    source pixel, ready for coordinate sampling.
    """
    levels: list
    grid: tuple  # (h, w) of the source feature map

    def __post_init__(self):
        if len(self.levels) != CORR_LEVELS:
            raise DimensionError(f"expected {CORR_LEVELS} pyramid levels, got {len(self.levels)}")


@dataclass
class GruState:
    h: Tensor        # [hidden, h, w], tanh-bounded
    context: Tensor  # [context_channels, h, w]


def register_flow(params: ParamSet, cfg: ModelConfig, rng):
    cin = 2 * cfg.channels
    D, cc, hid = cfg.feat_channels, cfg.context_channels, cfg.hidden_channels
    register_conv(params, "flow.feat.c1", cin, D, 3, rng)
    register_conv(params, "flow.feat.c2", D, D, 3, rng)
    register_conv(params, "flow.feat.c3", D, D, 3, rng)
    register_conv(params, "flow.ctx.c1", cfg.channels, cc, 3, rng)
    register_conv(params, "flow.ctx.c2", cc, cc, 3, rng)
    register_conv(params, "flow.ctx.c3", cc, cc, 3, rng)
    register_conv(params, "flow.hinit", cc, hid, 1, rng)
    xin = (2 * cfg.lookup_radius + 1) ** 2 * CORR_LEVELS + 2 + cc
    register_conv(params, "flow.gru.wz", hid + xin, hid, 3, rng)
    register_conv(params, "flow.gru.wr", hid + xin, hid, 3, rng)
    register_conv(params, "flow.gru.wh", hid + xin, hid, 3, rng)
    register_conv(params, "flow.head.c1", hid, hid, 3, rng)
    register_conv(params, "flow.head.c2", hid, 2, 3, rng)


def encode_features(patch_pre, patch_noisy, params, cfg: ModelConfig):
    """Correlation features for one patch, [C,p,p] x2 -> [D, p/2, p/2]."""
    if patch_pre.shape != patch_noisy.shape:
        raise DimensionError(f"patch shapes differ: {patch_pre.shape} vs {patch_noisy.shape}")
    C, p, _ = patch_pre.shape
    if p % 2:
        raise DimensionError(f"patch extent {p} not divisible by the downsample factor 2")
    x = concat([patch_pre, patch_noisy], axis=0).reshape(1, 2 * C, p, p)
    x = conv(params, "flow.feat.c1", x, stride=2, padding=1).relu()
    x = conv(params, "flow.feat.c2", x).relu()
    x = conv(params, "flow.feat.c3", x)
    return x.reshape(cfg.feat_channels, p // 2, p // 2)


def encode_context(ref_patch, params, cfg: ModelConfig):
    """Spatial context from the pre-denoised reference patch, at 1/2 res."""
    C, p, _ = ref_patch.shape
    if p % 2:
        raise DimensionError(f"patch extent {p} not divisible by the downsample factor 2")
    x = ref_patch.reshape(1, C, p, p)
    x = conv(params, "flow.ctx.c1", x, stride=2, padding=1).relu()
    x = conv(params, "flow.ctx.c2", x).relu()
    x = conv(params, "flow.ctx.c3", x)
    return x.reshape(cfg.context_channels, p // 2, p // 2)


def build_corr_pyramid(feat1, feat2):
    """All-pairs inner products C[i,j,k,l] = sum_d f1[d,i,j] * f2[d,k,l].

    Level 1 is the full volume reshaped to [h*w, 1, h, w]; levels 2..4
    average-pool the target axes.
    """
    if feat1.shape != feat2.shape:
        raise DimensionError(f"feature shapes differ: {feat1.shape} vs {feat2.shape}")
    D, h, w = feat1.shape
    f1 = feat1.reshape(D, h * w).transpose(1, 0)   # [hw, D]
    f2 = feat2.reshape(D, h * w)                   # [D, hw]
    vol = matmul(f1, f2).reshape(h * w, 1, h, w)
    levels = [vol]
    for _ in range(CORR_LEVELS - 1):
        levels.append(avg_pool2(levels[-1]))
    return CorrelationPyramid(levels=levels, grid=(h, w))


def lookup(pyr: CorrelationPyramid, flow, radius):
    """Sample every pyramid level around the flow-displaced positions.

    For source pixel (i, j) the sampling centers at ((j, i) + flow)/2^(k-1)
    on level k, over a (2r+1)^2 integer offset grid in level units; level
    outputs concatenate to [(2r+1)^2 * 4, h, w].
    """
    if radius < 1:
        raise ParameterError(f"lookup radius must be >= 1, got {radius}")
    ft = flow.flow if isinstance(flow, FlowField) else flow
    h, w = pyr.grid
    if ft.shape != (2, h, w):
        raise DimensionError(f"flow {ft.shape} does not match feature grid {(2, h, w)}")
    n = 2 * radius + 1
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    grid = Tensor(np.stack([xs, ys]))  # [2, h, w]
    center = (ft + grid).reshape(2, h * w).transpose(1, 0).reshape(h * w, 2, 1, 1)
    dy, dx = np.meshgrid(np.arange(-radius, radius + 1, dtype=np.float64),
                         np.arange(-radius, radius + 1, dtype=np.float64), indexing="ij")
    delta = Tensor(np.stack([dx, dy])[None])  # [1, 2, n, n]
    slices = []
    for k, level in enumerate(pyr.levels):
        coords = center * (1.0 / 2 ** k) + delta
        s = bilinear_sample(level, coords, padding="border")  # [hw, 1, n, n]
        slices.append(s.reshape(h, w, n * n).transpose(2, 0, 1))
    return concat(slices, axis=0)


def gru_update(state: GruState, x_t, params):
    """One gated recurrent update plus the two-conv flow head.

    x_t is the concatenation of the lookup output, the current flow and
    the context features, [cx, h, w]. Returns the new state and a [2,h,w]
    flow correction.
    """
    hid, h, w = state.h.shape
    cx = x_t.shape[0]
    if x_t.shape[1:] != (h, w):
        raise DimensionError(f"input grid {x_t.shape[1:]} does not match state {(h, w)}")
    hb = state.h.reshape(1, hid, h, w)
    xb = x_t.reshape(1, cx, h, w)
    hx = concat([hb, xb], axis=1)
    z = conv(params, "flow.gru.wz", hx).sigmoid()
    r = conv(params, "flow.gru.wr", hx).sigmoid()
    cand = conv(params, "flow.gru.wh", concat([r * hb, xb], axis=1)).tanh()
    h_new = (1.0 - z) * hb + z * cand
    d = conv(params, "flow.head.c1", h_new).relu()
    delta = conv(params, "flow.head.c2", d).reshape(2, h, w)
    return GruState(h=h_new.reshape(hid, h, w), context=state.context), delta


def refine_flow(triplet, n_iters, params, cfg: ModelConfig):
    """Iterate flow refinement independently for each supporting patch.

    Flow starts at zero and accumulates the GRU corrections; returns one
    list of n_iters FlowFields per supporting frame, in triplet order.
    """
    if n_iters < 1:
        raise ParameterError(f"n_iters must be >= 1, got {n_iters}")
    ref_feat = encode_features(triplet.ref_pre, triplet.ref_noisy, params, cfg)
    ctx = encode_context(triplet.ref_pre, params, cfg)
    h, w = ref_feat.shape[1:]
    h0 = conv(params, "flow.hinit", ctx.reshape(1, *ctx.shape), padding=0).tanh()
    results = []
    for sup_pre, sup_noisy in zip(triplet.sup_pre, triplet.sup_noisy):
        sup_feat = encode_features(sup_pre, sup_noisy, params, cfg)
        pyr = build_corr_pyramid(ref_feat, sup_feat)
        state = GruState(h=h0.reshape(cfg.hidden_channels, h, w), context=ctx)
        flow = Tensor(np.zeros((2, h, w)))
        fields = []
        for k in range(1, n_iters + 1):
            corr = lookup(pyr, flow, cfg.lookup_radius)
            x_t = concat([corr, flow, ctx], axis=0)
            state, delta = gru_update(state, x_t, params)
            flow = flow + delta
            fields.append(FlowField(flow=flow, iteration=k))
        results.append(fields)
    return results
