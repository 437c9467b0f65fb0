"""Inside the flow refiner: correlation pyramid, lookup, GRU iterates.

The all-pairs correlation volume is built once per patch pair; each
iteration samples it around the current flow estimate and lets a
convolutional GRU (weights shared across iterations) emit a correction.
"""

import numpy as np

from cascade_denoiser import (ModelConfig, Tensor, build_corr_pyramid,
                              encode_features, init_params, lookup, refine_flow)
from cascade_denoiser.patchmatch import PatchTriplet

cfg = ModelConfig(patch_size=16, search_radius=4, feat_channels=16,
                  context_channels=16, hidden_channels=24, recon_channels=16,
                  max_iters=6)
params = init_params(cfg, seed=0)
rng = np.random.default_rng(1)

ref_pre = Tensor(rng.uniform(0, 1, (1, 16, 16)))
ref_noisy = Tensor(np.clip(ref_pre.data + rng.normal(0, 0.05, ref_pre.shape), 0, 1))

f1 = encode_features(ref_pre, ref_noisy, params, cfg)
f2 = encode_features(ref_pre, ref_noisy, params, cfg)
pyr = build_corr_pyramid(f1, f2)
print("pyramid level shapes:", [lv.shape for lv in pyr.levels])

corr = lookup(pyr, Tensor(np.zeros((2, 8, 8))), radius=3)
print("lookup output channels:", corr.shape[0], "(= 49 offsets x 4 levels)")


def noisy_copy(t, seed):
    r = np.random.default_rng(seed)
    return Tensor(np.clip(t.data + r.normal(0, 0.05, t.shape), 0, 1))

triplet = PatchTriplet(ref_noisy=ref_noisy, ref_pre=ref_pre,
                       sup_noisy=[noisy_copy(ref_pre, 2), noisy_copy(ref_pre, 3)],
                       sup_pre=[ref_pre, ref_pre],
                       ref_origin=(0, 0), sup_origins=[(0, 0), (0, 0)])
flows = refine_flow(triplet, cfg.max_iters, params, cfg)
print("iterates per supporting frame:", [len(f) for f in flows])
for field in flows[0]:
    mag = float(np.sqrt((field.flow.data ** 2).sum(0)).mean())
    print(f"  iteration {field.iteration}: mean |flow| = {mag:.4f} px")
print("(untrained weights wander; training pulls late iterates toward the truth)")
