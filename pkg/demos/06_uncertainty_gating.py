"""Uncertainty-gated early exit on mixed noise levels.

Each iteration emits a log-variance map alongside the denoised patch; the
loss drives sigma^2 toward the per-pixel residual norm, so the patch-mean
sigma^2 tracks the remaining error. The gate exits once it drops below a
threshold: lightly noised patches leave early, heavy ones keep refining.
"""

import numpy as np

from cascade_denoiser import (DataSpec, ExitPolicy, ModelConfig, TrainConfig,
                              add_noise, compute_savings, denoise_video, eu_loss,
                              synth_sequence, total_loss, train)
from cascade_denoiser.gate import GateDecision
from cascade_denoiser.tensor import Tensor

# the loss that makes the gate work: minimized when sigma^2 = |residual|
s = Tensor(np.full((1, 1, 1), 0.3))
g = Tensor(np.zeros((1, 1, 1)))
for v in (0.1, 0.3, 0.9):
    u = Tensor(np.log(np.full((1, 1, 1), v)))
    print(f"sigma^2={v:.1f}: eu_loss={eu_loss(s, g, u).item():+.4f}")
print("weighted objective over 3 iterations:",
      total_loss([1.0, 0.7, 0.5], gamma=0.8, max_iters=3).item())

cfg = ModelConfig(patch_size=16, search_radius=3, feat_channels=8,
                  context_channels=8, hidden_channels=12, recon_channels=8,
                  offset_groups=2, pre_width=4, max_iters=4)
tc = TrainConfig(steps=300, pre_steps=150, freeze_steps=100, lr=1.5e-3,
                 seed=1, max_iters=4)
data = DataSpec(frame_size=(32, 32), motion_max=1.0, sigmas=(0.02, 0.1))
params, _ = train(tc, data, cfg)

# calibrate a threshold from gate-off uncertainties, then denoise gated
clean = synth_sequence(seed=500, n_frames=3, size=(32, 32), motion=(0.5, 0.5))
stats = {}
for sigma in (0.02, 0.1):
    noisy = add_noise(clean, sigma=sigma, seed=501)
    off = ExitPolicy(enabled=False, max_iters=cfg.max_iters)
    _, frag = denoise_video(noisy, params, off, cfg, clean=clean)
    stats[sigma] = float(np.mean([r.mean_sigma2 for r in frag.patches]))
    print(f"sigma={sigma}: mean final sigma^2 = {stats[sigma]:.4f}")

tau = float(np.sqrt(stats[0.02] * stats[0.1]))  # between the two levels
print(f"threshold tau = {tau:.4f}")
for sigma in (0.02, 0.1):
    noisy = add_noise(clean, sigma=sigma, seed=501)
    on = ExitPolicy(enabled=True, threshold=tau, max_iters=cfg.max_iters)
    _, frag = denoise_video(noisy, params, on, cfg, clean=clean)
    decisions = [GateDecision(r.mean_sigma2, True, r.exit_iteration)
                 for r in frag.patches]
    print(f"sigma={sigma}: mean exit {frag.mean_iterations:.2f} of "
          f"{cfg.max_iters}, saved {compute_savings(decisions, cfg.max_iters):.0%}")
