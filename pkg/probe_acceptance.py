"""Probe run for the acceptance configuration (not part of the package)."""
import time

import numpy as np

import cascade_denoiser as cd
from cascade_denoiser.patchmatch import match_patch, _gray
from cascade_denoiser.tensor import Tensor, no_grad
from cascade_denoiser.train import _training_triplet


def flow_px(field, p):
    from cascade_denoiser.tensor import upsample2
    f = field.flow
    return (upsample2(f.reshape(1, 2, *f.shape[1:])) * 2.0).data.reshape(2, p, p)


CFG = cd.ModelConfig(patch_size=16, search_radius=4, feat_channels=16,
                     context_channels=16, hidden_channels=24, recon_channels=16,
                     offset_groups=4, pre_width=8, max_iters=6, gamma=0.8)
TRAIN = cd.TrainConfig(steps=700, pre_steps=300, freeze_steps=300, lr=1e-3,
                       flow_steps=700, flow_lr=4e-3, flow_shift_max=2.0,
                       flow_sigma=0.05, seed=0, max_iters=6, gamma=0.8,
                       clip_norm=1.0)
DATA = cd.DataSpec(frame_size=(48, 48), motion_max=3.0, sigmas=(0.02, 0.05, 0.1))

t0 = time.time()
params, log = cd.train(TRAIN, DATA, CFG)
t_train = time.time() - t0
joint = [r["loss"] for r in log.records if r["phase"] == "joint"]
fl = [r["loss"] for r in log.records if r["phase"] == "flow"]
print(f"train: {t_train/60:.1f} min; flow loss {np.mean(fl[:50]):.3f} -> "
      f"{np.mean(fl[-50:]):.3f}; joint first50 {np.mean(joint[:50]):.4f} "
      f"last50 {np.mean(joint[-50:]):.4f}", flush=True)
params.save("probe_params.bin")

# --- C3: EPE of first vs final iterate + exact integer recovery -------------
policy_off = cd.ExitPolicy(enabled=False, max_iters=CFG.max_iters)
p = CFG.patch_size
epe1, epeN = [], []
exact = 0
total_int = 0
rng = np.random.default_rng(1234)
for trial in range(30):
    seed = 10_000 + trial
    motion = rng.uniform(-3, 3, 2)
    clean = cd.synth_sequence(seed, 3, (48, 48), tuple(motion), texture="perlin")
    noisy = cd.add_noise(clean, sigma=0.05, seed=seed + 1)
    with no_grad():
        pre = cd.VideoSequence(frames=[cd.predenoise(f, params, CFG)
                                       for f in noisy.frames])
    ox, oy = 16, 16
    tri = _training_triplet(noisy, pre, 1, (ox, oy), CFG)
    with no_grad():
        flows = cd.refine_flow(tri, CFG.max_iters, params, CFG)
    for s_idx, sign in ((0, -1.0), (1, 1.0)):
        d = np.array(tri.sup_origins[s_idx]) - np.array([ox, oy])
        gt = sign * motion - d  # residual displacement after matching
        f1 = flow_px(flows[s_idx][0], p)
        fN = flow_px(flows[s_idx][-1], p)
        epe1.append(np.sqrt(((f1 - gt[:, None, None]) ** 2).sum(0)).mean())
        epeN.append(np.sqrt(((fN - gt[:, None, None]) ** 2).sum(0)).mean())

    # integer-shift recovery on the pre-denoised frames
    im = rng.integers(-4, 5, 2)
    clean_i = cd.synth_sequence(seed + 7, 3, (48, 48), tuple(im.astype(float)),
                                texture="perlin")
    noisy_i = cd.add_noise(clean_i, sigma=0.05, seed=seed + 8)
    with no_grad():
        pre_i = [cd.predenoise(f, params, CFG) for f in noisy_i.frames]
    ref = _gray(pre_i[1])[None, 16:32, 16:32]
    m = match_patch(Tensor(ref), Tensor(_gray(pre_i[2])[None]), (16, 16), 4)
    total_int += 1
    if m.displacement == (int(im[0]), int(im[1])):
        exact += 1
print(f"C3: EPE1 {np.mean(epe1):.3f} EPEN {np.mean(epeN):.3f} "
      f"(want N < 1); int recovery {exact}/{total_int}", flush=True)

# --- C4/C5/C6: per-iteration trajectories on a mixed-noise held-out set -----
records = []  # per patch: sigma, per-iter mse, per-iter mean|err|, per-iter mean s2
t1 = time.time()
for trial in range(24):
    seed = 50_000 + trial
    sigma = [0.02, 0.05, 0.1][trial % 3]
    motion = rng.uniform(-2, 2, 2)
    clean = cd.synth_sequence(seed, 3, (48, 48), tuple(motion), texture="perlin")
    noisy = cd.add_noise(clean, sigma=sigma, seed=seed + 1)
    with no_grad():
        pre = cd.VideoSequence(frames=[cd.predenoise(f, params, CFG)
                                       for f in noisy.frames])
        for oy in (0, 16, 32):
            for ox in (0, 16, 32):
                tri = _training_triplet(noisy, pre, 1, (ox, oy), CFG)
                flows = cd.refine_flow(tri, CFG.max_iters, params, CFG)
                outs = cd.run_cascade(tri, flows, CFG.max_iters, params,
                                      policy_off, CFG)
                target = clean.frames[1].data[:, oy:oy + p, ox:ox + p]
                rec = dict(sigma=sigma, mse=[], err=[], s2=[])
                for o in outs:
                    rec["mse"].append(float(((o.s.data - target) ** 2).mean()))
                    rec["err"].append(float(np.abs(o.s.data - target).mean()))
                    rec["s2"].append(float(np.exp(o.u.data).mean()))
                records.append(rec)
print(f"eval pass: {time.time()-t1:.0f}s over {len(records)} patches", flush=True)

def pz(m):
    return 10 * np.log10(1.0 / max(m, 1e-12))

psnr1 = np.mean([pz(r["mse"][0]) for r in records])
psnrN = np.mean([pz(r["mse"][-1]) for r in records])
print(f"C4: PSNR iter1 {psnr1:.2f} dB, iterN {psnrN:.2f} dB, gap {psnrN-psnr1:.3f}",
      flush=True)

r5 = cd.pearson([r["err"][-1] for r in records], [r["s2"][-1] for r in records])
print(f"C5: pearson r {r5:.3f} (want > 0.5)", flush=True)

# C6: simulate thresholds from the stored uncertainty trajectories
s2_last = sorted(r["s2"][-1] for r in records)
for q in (0.3, 0.5, 0.7):
    tau = s2_last[int(q * len(s2_last))]
    exits, mses = [], []
    for r in records:
        k = next((i + 1 for i, v in enumerate(r["s2"]) if v < tau), CFG.max_iters)
        exits.append((r["sigma"], k))
        mses.append(r["mse"][k - 1])
    mean_it = np.mean([k for _, k in exits])
    drop = psnrN - np.mean([pz(m) for m in mses])
    lo = np.mean([k for s, k in exits if s == 0.02])
    hi = np.mean([k for s, k in exits if s == 0.1])
    print(f"C6 tau={tau:.4g}: mean_iters {mean_it:.2f}, psnr drop {drop:.3f} dB, "
          f"exit(low) {lo:.2f} vs exit(high) {hi:.2f}", flush=True)
print(f"total {(time.time()-t0)/60:.1f} min")
