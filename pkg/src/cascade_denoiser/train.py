"""End-to-end toy-scale training on synthetic sequences.

Two phases: the pre-denoiser is first trained alone on single-frame MSE,
then the joint model optimizes the exponentially weighted uncertainty
objective over all iterations with the exit gate disabled. Pre-denoiser
parameters stay frozen for the first ``freeze_steps`` joint steps.
Optimization is decoupled-weight-decay Adam with bias correction and
global-norm gradient clipping. Everything is deterministic per seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields

import numpy as np

from .config import ModelConfig
from .errors import NonFiniteError, ParameterError, ParseError, TrainingDivergedError
from .flow import refine_flow
from .gate import ExitPolicy, eu_loss, total_loss
from .model import init_params
from .patchmatch import assemble_triplets
from .predenoise import predenoise
from .recon import run_cascade
from .synth import VideoSequence, add_noise, synth_sequence
from .tensor import ParamSet, Tensor, no_grad, sqrt, tmean, tsum


@dataclass
class TrainConfig:
    steps: int = 2000
    lr: float = 0.00002
    batch: int = 1
    freeze_steps: int = 300
    pre_steps: int = 300
    pre_lr: float = 0.001
    flow_steps: int = 300
    flow_lr: float = 0.001
    flow_shift_max: float = 2.0
    flow_sigma: float = 0.05
    seed: int = 0
    gamma: float = 0.8
    max_iters: int = 12
    threshold: float = 0.002
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    loss_form: str = "printed"

    def __post_init__(self):
        if self.steps < 1 or self.lr <= 0:
            raise ParameterError(f"need steps >= 1 and lr > 0, got {self.steps}, {self.lr}")


@dataclass
class DataSpec:
    """Synthetic training distribution."""
    frame_size: tuple = (48, 48)
    n_frames: int = 3
    textures: tuple = ("perlin", "checker", "gradient")
    motion_max: float = 3.0
    integer_motion: bool = False
    sigmas: tuple = (0.05,)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, **kw):
        self.records.append(kw)

    def to_csv(self, path, max_iters):
        cols = ["step", "phase", "loss", "grad_norm", "mean_exit_iter"]
        cols += [f"loss_iter_{k}" for k in range(1, max_iters + 1)]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(cols)
            for r in self.records:
                per = r.get("per_iter", [])
                per = list(per) + [""] * (max_iters - len(per))
                w.writerow([r["step"], r["phase"], repr(r["loss"]),
                            repr(r.get("grad_norm", 0.0)),
                            r.get("mean_exit_iter", "")] + [
                               repr(v) if v != "" else "" for v in per])


def sample_sequence(data: DataSpec, seed, channels=1):
    """Draw (clean, noisy, info) deterministically from the data spec."""
    rng = np.random.default_rng(seed)
    texture = str(rng.choice(data.textures))
    motion = rng.uniform(-data.motion_max, data.motion_max, 2)
    if data.integer_motion:
        motion = np.round(motion)
    sigma = float(rng.choice(data.sigmas))
    tex_seed = int(rng.integers(2 ** 62))
    noise_seed = int(rng.integers(2 ** 62))
    clean = synth_sequence(tex_seed, data.n_frames, data.frame_size,
                           tuple(motion), texture=texture, channels=channels)
    noisy = add_noise(clean, model="gaussian", sigma=sigma, seed=noise_seed)
    return clean, noisy, {"motion": tuple(motion), "sigma": sigma, "texture": texture}


# -- optimizer -----------------------------------------------------------------

def adamw_step(params: ParamSet, grads, moments, config: TrainConfig, t, skip=()):
    """One decoupled-weight-decay adaptive update; t is 1-based."""
    for name, p in params.items():
        if name in skip or name not in grads:
            continue
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        if name not in moments:
            moments[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
        m, v = moments[name]
        m = config.beta1 * m + (1 - config.beta1) * g
        v = config.beta2 * v + (1 - config.beta2) * g * g
        moments[name] = (m, v)
        m_hat = m / (1 - config.beta1 ** t)
        v_hat = v / (1 - config.beta2 ** t)
        p.data -= config.lr * config.weight_decay * p.data
        p.data -= config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return params, moments


def _collect_grads(params: ParamSet, skip=()):
    grads = {}
    for name, p in params.items():
        if name in skip or p.grad is None:
            continue
        grads[name] = p.grad
    return grads


def _clip_global_norm(grads, clip):
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if clip > 0 and total > clip:
        scale = clip / total
        for g in grads.values():
            g *= scale
    return total


# -- training phases -----------------------------------------------------------

def pretrain_predenoise(params, config: TrainConfig, data: DataSpec,
                        cfg: ModelConfig, log: TrainLog, moments):
    """Phase A: single-frame MSE training of the pre-denoiser."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xA]))
    pre_names = [n for n in params.names() if n.startswith("pre.")]
    others = [n for n in params.names() if not n.startswith("pre.")]
    lr_cfg = TrainConfig(**{**_cfg_dict(config), "lr": config.pre_lr})
    for step in range(1, config.pre_steps + 1):
        clean, noisy, _ = sample_sequence(data, int(rng.integers(2 ** 62)), cfg.channels)
        params.zero_grad()
        out = predenoise(noisy.frames[0], params, cfg)
        diff = out - clean.frames[0]
        loss = tmean(diff * diff)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDivergedError(step, "pre-denoise loss")
        loss.backward()
        grads = _collect_grads(params, skip=others)
        gnorm = _clip_global_norm(grads, config.clip_norm)
        adamw_step(params, grads, moments, lr_cfg, step, skip=others)
        log.append(step=step, phase="pre", loss=value, grad_norm=gnorm)
    return params


def _cfg_dict(config):
    return {f.name: getattr(config, f.name) for f in fields(config)}


def pretrain_flow(params, config: TrainConfig, data: DataSpec,
                  cfg: ModelConfig, log: TrainLog, moments):
    """Phase B: flow refinement on translated patch pairs with known flow.

    Stands in for the external-dataset flow pretraining of the full-scale
    recipe: each step draws a textured patch and two sub-pixel translated
    copies, and every iterate is pulled toward the true displacement with
    the same exponentially increasing weights as the main objective.
    """
    from .patchmatch import PatchTriplet
    from .synth import _texture, _translate
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xF]))
    others = [n for n in params.names() if not n.startswith("flow.")]
    lr_cfg = TrainConfig(**{**_cfg_dict(config), "lr": config.flow_lr})
    p = cfg.patch_size
    # margin keeps clamp-filled borders out of the supervised crops
    margin = int(np.ceil(config.flow_shift_max)) + 1
    size = p + 2 * margin
    crop = (slice(None), slice(margin, margin + p), slice(margin, margin + p))

    def noisy_crop(img):
        n = rng.standard_normal(img.shape) * config.flow_sigma
        return Tensor(np.clip(img + n, 0.0, 1.0)[crop])

    for step in range(1, config.flow_steps + 1):
        texture = str(rng.choice(data.textures))
        base = np.stack([_texture(texture, size, size, rng)
                         for _ in range(cfg.channels)])
        shifts = [rng.uniform(-config.flow_shift_max, config.flow_shift_max, 2)
                  for _ in range(2)]
        sups = [_translate(base, *s) for s in shifts]
        triplet = PatchTriplet(
            ref_noisy=noisy_crop(base), ref_pre=Tensor(base[crop]),
            sup_noisy=[noisy_crop(s) for s in sups],
            sup_pre=[Tensor(s[crop]) for s in sups],
            ref_origin=(margin, margin),
            sup_origins=[(margin, margin)] * 2)
        gts = [s / 2.0 for s in shifts]  # feature resolution = patch px / 2
        params.zero_grad()
        flows = refine_flow(triplet, config.max_iters, params, cfg)
        per_iter = []
        for k in range(config.max_iters):
            k_losses = []
            for fields_k, gt in zip(flows, gts):
                diff = fields_k[k].flow - Tensor(gt[:, None, None])
                k_losses.append(tmean(sqrt(tsum(diff * diff, axis=0,
                                               keepdims=True))))
            per_iter.append(total_loss(k_losses, 1.0) * 0.5)
        loss = total_loss(per_iter, config.gamma, config.max_iters)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDivergedError(step, "flow pretraining loss")
        loss.backward()
        grads = _collect_grads(params, skip=others)
        gnorm = _clip_global_norm(grads, config.clip_norm)
        adamw_step(params, grads, moments, lr_cfg, step, skip=others)
        log.append(step=step, phase="flow", loss=value, grad_norm=gnorm)
    return params


def _prepare_step(data, cfg, seed, record_pre_grad, params):
    """Synthesize one sequence and pre-denoise every frame."""
    clean, noisy, info = sample_sequence(data, seed, cfg.channels)
    if record_pre_grad:
        pre_frames = [predenoise(f, params, cfg) for f in noisy.frames]
    else:
        with no_grad():
            pre_frames = [predenoise(f, params, cfg) for f in noisy.frames]
    return clean, noisy, VideoSequence(frames=pre_frames), info


def train(config: TrainConfig, data: DataSpec, cfg: ModelConfig,
          params: ParamSet | None = None):
    """Full toy training run; returns (params, log).

    The exit gate stays disabled so every iteration contributes to the
    weighted objective. Raises TrainingDivergedError on a non-finite loss.
    """
    if params is None:
        params = init_params(cfg, config.seed)
    log = TrainLog()
    moments = {}
    if config.pre_steps > 0:
        pretrain_predenoise(params, config, data, cfg, log, moments)
    if config.flow_steps > 0:
        pretrain_flow(params, config, data, cfg, log, moments)

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xB]))
    policy = ExitPolicy(enabled=False, threshold=config.threshold,
                        max_iters=config.max_iters)
    n = config.max_iters
    p = cfg.patch_size
    for step in range(1, config.steps + 1):
        # both pretrained parts stay frozen for the first freeze_steps
        frozen_pre = step <= config.freeze_steps
        skip = tuple(name for name in params.names()
                     if frozen_pre and name.startswith(("pre.", "flow.")))
        seed = int(rng.integers(2 ** 62))
        try:
            clean, noisy, pre_seq, _ = _prepare_step(
                data, cfg, seed, record_pre_grad=not frozen_pre, params=params)
            H, W = data.frame_size
            t_ref = len(noisy.frames) // 2
            origin_rng = np.random.default_rng(np.random.SeedSequence([seed, step]))
            params.zero_grad()
            batch_losses = []
            per_iter_values = None
            for _ in range(config.batch):
                ox = int(origin_rng.integers(0, W - p + 1))
                oy = int(origin_rng.integers(0, H - p + 1))
                triplet = _training_triplet(noisy, pre_seq, t_ref, (ox, oy), cfg)
                flows = refine_flow(triplet, n, params, cfg)
                outs = run_cascade(triplet, flows, n, params, policy, cfg)
                target = Tensor(clean.frames[t_ref].data[:, oy:oy + p, ox:ox + p])
                per_iter = [eu_loss(o.s, target, o.u, form=config.loss_form)
                            for o in outs]
                batch_losses.append(total_loss(per_iter, config.gamma, n))
                per_iter_values = [pl.item() for pl in per_iter]
            loss = batch_losses[0] if config.batch == 1 else \
                total_loss(batch_losses, 1.0) * (1.0 / config.batch)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(step)
            loss.backward()
        except NonFiniteError as e:
            raise TrainingDivergedError(step, str(e)) from e
        grads = _collect_grads(params, skip=skip)
        gnorm = _clip_global_norm(grads, config.clip_norm)
        adamw_step(params, grads, moments, config, step, skip=skip)
        log.append(step=step, phase="joint", loss=value, grad_norm=gnorm,
                   mean_exit_iter=len(per_iter_values), per_iter=per_iter_values)
    return params, log


def _training_triplet(noisy, pre_seq, t, origin, cfg: ModelConfig):
    """One matched triplet at a chosen reference origin."""
    from .patchmatch import PatchTriplet, match_patch, _gray
    x, y = origin
    p = cfg.patch_size
    ref_gray = _gray(pre_seq.frames[t])[None, y:y + p, x:x + p]
    sup_noisy, sup_pre, sup_origins = [], [], []
    for i in (t - 1, t + 1):
        m = match_patch(Tensor(ref_gray), Tensor(_gray(pre_seq.frames[i])[None]),
                        (x, y), cfg.search_radius)
        ox, oy = m.argmax
        sup_noisy.append(noisy.frames[i][:, oy:oy + p, ox:ox + p])
        sup_pre.append(pre_seq.frames[i][:, oy:oy + p, ox:ox + p])
        sup_origins.append((ox, oy))
    return PatchTriplet(ref_noisy=noisy.frames[t][:, y:y + p, x:x + p],
                        ref_pre=pre_seq.frames[t][:, y:y + p, x:x + p],
                        sup_noisy=sup_noisy, sup_pre=sup_pre,
                        ref_origin=(x, y), sup_origins=sup_origins)


# -- config file ---------------------------------------------------------------

_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_DATA_KEYS = {f.name for f in fields(DataSpec)}
_OUT_KEYS = {"params_path", "log_path", "report_path", "out_dir"}


def parse_config_file(path):
    """Plain key=value text -> (TrainConfig, DataSpec, ModelConfig, outputs).

    '#' starts a comment; lists are comma separated; frame_size is
    "HxW". Unknown keys raise a ParseError naming the line.
    """
    raw = {}
    with open(path) as f:
        for ln, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected key=value, got {line!r}", line=ln)
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in _MODEL_KEYS | _TRAIN_KEYS | _DATA_KEYS | _OUT_KEYS:
                raise ParseError(f"unknown config key {key!r}", line=ln)
            raw[key] = (value, ln)

    def coerce(key, value, ln, template):
        cur = getattr(template, key)
        try:
            if isinstance(cur, bool):
                return value.lower() in ("1", "true", "yes")
            if isinstance(cur, int):
                return int(value)
            if isinstance(cur, float):
                return float(value)
            if isinstance(cur, tuple):
                if key == "frame_size":
                    h, w = value.lower().split("x")
                    return (int(h), int(w))
                parts = [s.strip() for s in value.split(",") if s.strip()]
                return tuple(type(cur[0])(s) for s in parts)
            return value
        except ValueError as e:
            raise ParseError(f"bad value for {key!r}: {value!r}", line=ln) from e

    model_kw, train_kw, data_kw, out = {}, {}, {}, {}
    m0, t0, d0 = ModelConfig(), TrainConfig(), DataSpec()
    for key, (value, ln) in raw.items():
        if key in _MODEL_KEYS:
            model_kw[key] = coerce(key, value, ln, m0)
        if key in _TRAIN_KEYS:
            train_kw[key] = coerce(key, value, ln, t0)
        if key in _DATA_KEYS:
            data_kw[key] = coerce(key, value, ln, d0)
        if key in _OUT_KEYS:
            out[key] = value
    return (TrainConfig(**train_kw), DataSpec(**data_kw),
            ModelConfig(**model_kw), out)
