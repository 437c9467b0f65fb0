"""Coarse patch alignment by exhaustive normalized cross-correlation.

Matching runs on the grayscale projection (channel mean) of the
pre-denoised frames. The correlation is the plain (uncentered) normalized
product score in [-1, 1]; all-zero patches make it undefined, which the
pipeline resolves by falling back to zero displacement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateMatchError, DimensionError, ParameterError
from .tensor import Tensor


@dataclass
class PatchTriplet:
    """Matched patches for one reference tile and its two temporal neighbors.

    sup_* lists are ordered [frame t-1, frame t+1]. Origins are (x, y)
    top-left corners; all patches lie fully inside their frames.
    """
    ref_noisy: Tensor
    ref_pre: Tensor
    sup_noisy: list
    sup_pre: list
    ref_origin: tuple
    sup_origins: list


@dataclass
class MatchScoreMap:
    """Scores over the clipped search window, row-major in (y, x)."""
    scores: Tensor
    argmax: tuple           # absolute (x, y) origin of the best placement
    displacement: tuple     # argmax - center
    window_origin: tuple    # (x, y) of score[0, 0]

    def __post_init__(self):
        s = self.scores.data
        if s.size and not (s.min() >= -1.0 - 1e-12 and s.max() <= 1.0 + 1e-12):
            raise ValueError("correlation scores left [-1, 1]")


def ncc_score(template, window):
    """Normalized correlation of two same-shape patches, in [-1, 1].

    Numerator and both energies sum over every element (channels
    included). Raises DegenerateMatchError when either patch has zero
    energy.
    """
    t = template.data if isinstance(template, Tensor) else np.asarray(template)
    w = window.data if isinstance(window, Tensor) else np.asarray(window)
    if t.shape != w.shape:
        raise DimensionError(f"template {t.shape} vs window {w.shape}")
    st = float((t * t).sum())
    sw = float((w * w).sum())
    if st == 0.0 or sw == 0.0:
        raise DegenerateMatchError("zero-energy patch in normalized correlation")
    return float((t * w).sum() / np.sqrt(st * sw))


def _gray(frame):
    data = frame.data if isinstance(frame, Tensor) else np.asarray(frame)
    return data.mean(axis=0)


def match_patch(ref_patch, sup_frame, center, search_radius):
    """Exhaustive correlation scan of a (2r+1)^2 window of placements.

    ``center`` is the (x, y) placement aligned with the reference patch;
    candidate origins are clipped to keep the patch inside the frame.
    Ties break toward the smallest displacement, then row-major window
    order. Zero-energy placements (and a zero-energy template) score 0.
    """
    t = ref_patch.data if isinstance(ref_patch, Tensor) else np.asarray(ref_patch)
    f = sup_frame.data if isinstance(sup_frame, Tensor) else np.asarray(sup_frame)
    if t.ndim != 3 or f.ndim != 3 or t.shape[0] != f.shape[0]:
        raise DimensionError(f"patch {t.shape} incompatible with frame {f.shape}")
    C, p, p2 = t.shape
    if p != p2:
        raise DimensionError(f"patch must be square, got {p}x{p2}")
    H, W = f.shape[1:]
    cx, cy = center
    x_lo, x_hi = max(0, cx - search_radius), min(W - p, cx + search_radius)
    y_lo, y_hi = max(0, cy - search_radius), min(H - p, cy + search_radius)
    if x_lo > x_hi or y_lo > y_hi:
        raise ParameterError(
            f"empty search window for center {center}, radius {search_radius}, "
            f"frame {W}x{H}, patch {p}")

    windows = sliding_window_view(f, (p, p), axis=(1, 2))  # [C, H-p+1, W-p+1, p, p]
    win = windows[:, y_lo:y_hi + 1, x_lo:x_hi + 1]
    num = np.einsum("cpq,cyxpq->yx", t, win)
    energy = np.einsum("cyxpq,cyxpq->yx", win, win)
    st = float((t * t).sum())
    scores = np.zeros_like(num)
    ok = energy > 0.0
    if st > 0.0:
        scores[ok] = num[ok] / np.sqrt(st * energy[ok])

    ny, nx = scores.shape
    best = scores.max()
    ties = np.argwhere(scores == best)
    dx = ties[:, 1] + x_lo - cx
    dy = ties[:, 0] + y_lo - cy
    order = np.lexsort((ties[:, 0] * nx + ties[:, 1], dx * dx + dy * dy))
    iy, ix = ties[order[0]]
    ax, ay = int(ix + x_lo), int(iy + y_lo)
    return MatchScoreMap(scores=Tensor(scores), argmax=(ax, ay),
                         displacement=(ax - cx, ay - cy), window_origin=(x_lo, y_lo))


def assemble_triplets(frames_noisy, frames_pre, t, patch_size, stride, search_radius):
    """Tile reference frame ``t`` and match each tile in frames t-1 and t+1.

    Matching uses the grayscale projection of the pre-denoised frames;
    patches are extracted from both the noisy and pre-denoised sequences.
    """
    if not (0 < t < len(frames_noisy.frames) - 1):
        raise ParameterError(f"frame {t} needs both neighbors in 0..{len(frames_noisy.frames) - 1}")
    C, H, W = frames_noisy.shape
    p = patch_size
    if p > H or p > W:
        raise ParameterError(f"patch {p} larger than frame {W}x{H}")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")

    ref_noisy = frames_noisy.frames[t]
    ref_pre = frames_pre.frames[t]
    sup_idx = (t - 1, t + 1)
    sup_gray = [_gray(frames_pre.frames[i]) for i in sup_idx]

    triplets = []
    for y in range(0, H - p + 1, stride):
        for x in range(0, W - p + 1, stride):
            tpl = _gray(ref_pre)[None, y:y + p, x:x + p]
            sup_noisy, sup_pre, sup_origins = [], [], []
            for i, gray in zip(sup_idx, sup_gray):
                # degenerate (zero-energy) regions score 0 inside match_patch,
                # so the tie-break lands on zero displacement by itself
                m = match_patch(Tensor(tpl), Tensor(gray[None]), (x, y), search_radius)
                ox, oy = m.argmax
                sup_noisy.append(frames_noisy.frames[i][:, oy:oy + p, ox:ox + p])
                sup_pre.append(frames_pre.frames[i][:, oy:oy + p, ox:ox + p])
                sup_origins.append((ox, oy))
            triplets.append(PatchTriplet(
                ref_noisy=ref_noisy[:, y:y + p, x:x + p],
                ref_pre=ref_pre[:, y:y + p, x:x + p],
                sup_noisy=sup_noisy, sup_pre=sup_pre,
                ref_origin=(x, y), sup_origins=sup_origins))
    return triplets
