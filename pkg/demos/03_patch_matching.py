"""Coarse alignment: exhaustive normalized cross-correlation matching.

Matching absorbs large integer motion before the flow network sees the
patches, which is what lets a small patch handle fast-moving content: the
flow refinement then only has to resolve the sub-pixel remainder.
"""

import numpy as np

from cascade_denoiser import (Tensor, add_noise, assemble_triplets, match_patch,
                              ncc_score, synth_sequence)
from cascade_denoiser.synth import VideoSequence

# self-match scores 1, anti-correlation -1
patch = Tensor(np.random.default_rng(0).uniform(0.1, 1.0, (1, 8, 8)))
print("self match:", ncc_score(patch, patch))
print("anti match:", ncc_score(patch, Tensor(-patch.data)))

# a translated sequence: the argmax displacement recovers the motion exactly
seq = synth_sequence(seed=3, n_frames=3, size=(48, 48), motion=(3, -2),
                     texture="perlin")
noisy = add_noise(seq, sigma=0.05, seed=9)
ref = noisy.frames[1].data[:, 16:32, 16:32]
m = match_patch(Tensor(ref), noisy.frames[2], center=(16, 16), search_radius=6)
print("true shift (3, -2), matched displacement:", m.displacement,
      "score:", float(m.scores.data.max()))

# assemble_triplets tiles the reference frame and matches both neighbors
pre = VideoSequence(frames=[Tensor(f.data.copy()) for f in noisy.frames])
triplets = assemble_triplets(noisy, pre, t=1, patch_size=16, stride=16,
                             search_radius=6)
print(f"{len(triplets)} tiles; displacements for the middle row:")
for tri in triplets[3:6]:
    d_prev = tuple(int(v) for v in np.subtract(tri.sup_origins[0], tri.ref_origin))
    d_next = tuple(int(v) for v in np.subtract(tri.sup_origins[1], tri.ref_origin))
    print(f"  ref {tri.ref_origin}: prev {d_prev}, next {d_next}")
