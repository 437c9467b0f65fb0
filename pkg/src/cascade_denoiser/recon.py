"""One cascading reconstruction iteration and the loop around it.

Each iteration warps the supporting-frame features with the current flow
iterate, aligns them with a flow-guided modulated deformable convolution,
fuses them with the running reference feature map, and emits a denoised
patch plus a log-variance uncertainty map from two small heads. The fused
map feeds the next iteration; an exit policy may stop the loop early.

Restoration features live at full patch resolution, so the half-resolution
flow iterates are bilinearly upsampled x2 and scaled x2 before use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import DimensionError, ParameterError
from .flow import FlowField
from .gate import ExitPolicy, decide_exit
from .layers import conv, register_conv, register_resblock, resblock
from .tensor import (ParamSet, Tensor, bilinear_sample, clamp, concat, conv2d,
                     identity_grid, upsample2)


@dataclass
class FrameFeatures:
    """Restoration features of one frame's stacked noisy+pre patches."""
    m: Tensor  # [F, p, p]


@dataclass
class IterationOutput:
    """What one reconstruction iteration leaves behind."""
    r_next: Tensor   # fused reference features [F, p, p]
    s: Tensor        # denoised patch [C, p, p]
    u: Tensor        # log sigma^2 map [1, p, p]
    flows: tuple     # the FlowFields consumed, one per supporting frame


def register_recon(params: ParamSet, cfg: ModelConfig, rng):
    cin = 2 * cfg.channels
    F = cfg.recon_channels
    G = cfg.offset_groups
    register_conv(params, "recon.feat.c1", cin, F, 3, rng)
    register_conv(params, "recon.feat.c2", F, F, 3, rng)
    register_conv(params, "recon.feat.c3", F, F, 3, rng)
    register_conv(params, "recon.dcn.off1", 2 * F, 2 * F, 3, rng)
    register_conv(params, "recon.dcn.off2", 2 * F, G * 18, 3, rng)
    register_conv(params, "recon.dcn.mask1", 2 * F, 2 * F, 3, rng)
    register_conv(params, "recon.dcn.mask2", 2 * F, G * 9, 3, rng)
    register_conv(params, "recon.dcn.kernel", F, F, 3, rng)
    register_conv(params, "recon.fuse.proj", 3 * F, F, 3, rng)
    register_resblock(params, "recon.fuse.res1", F, rng)
    register_resblock(params, "recon.fuse.res2", F, rng)
    register_conv(params, "recon.head_s.c1", F, F, 3, rng)
    register_conv(params, "recon.head_s.c2", F, cfg.channels, 3, rng)
    register_conv(params, "recon.head_u.c1", F, F, 3, rng)
    register_conv(params, "recon.head_u.c2", F, 1, 3, rng)


def extract_restoration_features(patch_noisy, patch_pre, params, cfg: ModelConfig):
    """Stacked noisy+pre patch -> FrameFeatures at patch resolution."""
    if patch_noisy.shape != patch_pre.shape:
        raise DimensionError(f"patch shapes differ: {patch_noisy.shape} vs {patch_pre.shape}")
    C, p, _ = patch_noisy.shape
    x = concat([patch_noisy, patch_pre], axis=0).reshape(1, 2 * C, p, p)
    x = conv(params, "recon.feat.c1", x).relu()
    x = conv(params, "recon.feat.c2", x).relu()
    x = conv(params, "recon.feat.c3", x)
    return FrameFeatures(m=x.reshape(cfg.recon_channels, p, p))


def warp_features(m, flow):
    """Backward-warp features by a pixel-unit flow (clamped borders)."""
    feat = m.m if isinstance(m, FrameFeatures) else m
    ft = flow.flow if isinstance(flow, FlowField) else flow
    F, h, w = feat.shape
    if ft.shape != (2, h, w):
        raise DimensionError(f"flow {ft.shape} does not match features {(2, h, w)}")
    coords = identity_grid(h, w) + ft.reshape(1, 2, h, w)
    out = bilinear_sample(feat.reshape(1, F, h, w), coords, padding="border")
    return out.reshape(F, h, w)


def flow_guided_dcn(m_sup, m_warped, r_k, flow, params, cfg: ModelConfig):
    """Flow-guided modulated deformable 3x3 convolution of the supporting map.

    Residual offsets and modulation masks come from convolutions over
    concat(r_k, warped supporting features); the flow is added to every
    tap's offset and the total is clamped to +-patch/2. The unwarped
    supporting features are sampled per offset group (zero outside the
    patch, so zero offsets with unit mask reduce to a plain padded conv).
    """
    feat = m_sup.m if isinstance(m_sup, FrameFeatures) else m_sup
    F, p, _ = feat.shape
    G = cfg.offset_groups
    cg = F // G
    ft = flow.flow if isinstance(flow, FlowField) else flow
    if m_warped.shape != feat.shape or r_k.shape != feat.shape:
        raise DimensionError(
            f"feature maps disagree: sup {feat.shape}, warped {m_warped.shape}, r {r_k.shape}")
    if ft.shape != (2, p, p):
        raise DimensionError(f"flow {ft.shape} does not match features {(2, p, p)}")

    guide = concat([r_k, m_warped], axis=0).reshape(1, 2 * F, p, p)
    off = conv(params, "recon.dcn.off2", conv(params, "recon.dcn.off1", guide).relu())
    mask = conv(params, "recon.dcn.mask2", conv(params, "recon.dcn.mask1", guide).relu()).sigmoid()

    # offset channels are (tap, group, x/y) so a reshape gives sampling batches
    off = off.reshape(9 * G, 2, p, p)
    total = clamp(off + ft.reshape(1, 2, p, p), -p / 2.0, p / 2.0)
    taps = np.stack(np.meshgrid((-1.0, 0.0, 1.0), (-1.0, 0.0, 1.0), indexing="ij"))
    tap_delta = taps[::-1].transpose(1, 2, 0).reshape(9, 1, 2).repeat(G, axis=1)  # (dx, dy)
    coords = total + identity_grid(p, p) + Tensor(tap_delta.reshape(9 * G, 2, 1, 1))

    grouped = feat.reshape(G, cg, p, p)
    tiled = concat([grouped] * 9, axis=0)                       # [9G, cg, p, p]
    sampled = bilinear_sample(tiled, coords, padding="zeros")
    sampled = sampled * mask.reshape(9 * G, 1, p, p)
    sampled = sampled.reshape(1, 9 * F, p, p)

    w = params["recon.dcn.kernel.w"]                            # [F, F, 3, 3]
    w1x1 = w.transpose(0, 2, 3, 1).reshape(F, 9 * F, 1, 1)      # tap-major input order
    out = conv2d(sampled, w1x1, params["recon.dcn.kernel.b"], stride=1, padding=0)
    return out.reshape(F, p, p)


def fuse(aligned_prev, r_k, aligned_next, params, cfg: ModelConfig):
    """Residual fusion of the aligned supporting maps with the reference map."""
    if aligned_prev.shape != r_k.shape or aligned_next.shape != r_k.shape:
        raise DimensionError(
            f"fusion inputs disagree: {aligned_prev.shape}, {r_k.shape}, {aligned_next.shape}")
    F, p, _ = r_k.shape
    x = concat([aligned_prev, r_k, aligned_next], axis=0).reshape(1, 3 * F, p, p)
    x = conv(params, "recon.fuse.proj", x)
    x = resblock(params, "recon.fuse.res1", x)
    x = resblock(params, "recon.fuse.res2", x)
    return x.reshape(F, p, p)


def heads(r_next, ref_pre, params, cfg: ModelConfig):
    """Denoised patch (residual over the pre-denoised reference) and log
    sigma^2 uncertainty map, each from two convolutions."""
    F, p, _ = r_next.shape
    x = r_next.reshape(1, F, p, p)
    s_res = conv(params, "recon.head_s.c2", conv(params, "recon.head_s.c1", x).relu())
    u = conv(params, "recon.head_u.c2", conv(params, "recon.head_u.c1", x).relu())
    s = ref_pre + s_res.reshape(cfg.channels, p, p)
    return s, u.reshape(1, p, p)


def run_cascade(triplet, flows, max_iters, params, policy: ExitPolicy,
                cfg: ModelConfig):
    """Run up to max_iters reconstruction iterations, gated by ``policy``.

    ``flows`` holds one list of FlowFields per supporting frame (feature
    resolution); iteration k consumes iterate k. Returns the
    IterationOutputs actually produced.
    """
    if any(len(f) < max_iters for f in flows):
        raise ParameterError(
            f"need {max_iters} flow iterates per supporting frame, "
            f"got {[len(f) for f in flows]}")
    m_ref = extract_restoration_features(triplet.ref_noisy, triplet.ref_pre, params, cfg)
    m_sup = [extract_restoration_features(n, pr, params, cfg)
             for n, pr in zip(triplet.sup_noisy, triplet.sup_pre)]
    p = cfg.patch_size
    r = m_ref.m
    outputs = []
    for k in range(1, max_iters + 1):
        aligned = []
        used = []
        for m, fl in zip(m_sup, flows):
            field = fl[k - 1]
            fpx = (upsample2(field.flow.reshape(1, 2, *field.flow.shape[1:])) * 2.0)
            fpx = fpx.reshape(2, p, p)
            warped = warp_features(m, fpx)
            aligned.append(flow_guided_dcn(m, warped, r, fpx, params, cfg))
            used.append(field)
        r = fuse(aligned[0], r, aligned[1], params, cfg)
        s, u = heads(r, triplet.ref_pre, params, cfg)
        outputs.append(IterationOutput(r_next=r, s=s, u=u, flows=tuple(used)))
        if decide_exit(u, policy, k).exit:
            break
    return outputs
