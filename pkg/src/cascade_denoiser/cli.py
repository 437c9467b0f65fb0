"""Command line entry points: train, denoise, eval, bench.

The seed from a config file can be overridden with the
CASCADE_DENOISER_SEED environment variable. Every numeric output printed
to stdout is also written to a CSV next to the requested outputs.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys

from .config import ModelConfig
from .errors import (DimensionError, DomainError, ParameterError, ParseError,
                     TrainingDivergedError)
from .gate import ExitPolicy
from .metrics import psnr, ssim
from .pipeline import bench, denoise_video, write_patch_csv, write_report_csv
from .synth import read_frame, read_manifest, write_sequence
from .tensor import ParamSet
from .train import parse_config_file, train

SEED_ENV = "CASCADE_DENOISER_SEED"


def _apply_seed_override(train_cfg):
    seed = os.environ.get(SEED_ENV)
    if seed is not None:
        try:
            train_cfg.seed = int(seed)
        except ValueError:
            raise ParameterError(f"{SEED_ENV} must be an integer, got {seed!r}")
    return train_cfg


def _cmd_train(args):
    train_cfg, data, model_cfg, out = parse_config_file(args.config)
    _apply_seed_override(train_cfg)
    params, log = train(train_cfg, data, model_cfg)
    params_path = out.get("params_path", "params.bin")
    log_path = out.get("log_path", "train_log.csv")
    params.save(params_path)
    log.to_csv(log_path, train_cfg.max_iters)
    last = [r for r in log.records if r["phase"] == "joint"][-1]
    print(f"trained {train_cfg.steps} steps, final loss {last['loss']:.6f}")
    print(f"params -> {params_path}")
    print(f"log -> {log_path}")
    return 0


def _cmd_denoise(args):
    if args.config:
        _, _, model_cfg, _ = parse_config_file(args.config)
    else:
        model_cfg = ModelConfig()
    params = ParamSet.load(args.params)
    noisy = read_manifest(getattr(args, "in"))
    policy = ExitPolicy(enabled=not args.no_gate,
                        threshold=args.threshold if args.threshold is not None
                        else model_cfg.threshold,
                        max_iters=args.max_iters if args.max_iters is not None
                        else model_cfg.max_iters)
    denoised, report = denoise_video(noisy, params, policy, model_cfg)
    os.makedirs(args.out, exist_ok=True)
    write_sequence(args.out, denoised, prefix="denoised")
    write_patch_csv(report, os.path.join(args.out, "patches.csv"))
    print(f"frames: {len(denoised.frames)}")
    print(f"mean iterations: {report.mean_iterations:.3f}")
    print(f"savings: {report.savings:.4f}")
    return 0


def _read_dir(path):
    manifest = os.path.join(path, "manifest.txt")
    if os.path.exists(manifest):
        return read_manifest(manifest)
    names = sorted(n for n in os.listdir(path) if n.endswith((".pgm", ".ppm")))
    if not names:
        raise ParameterError(f"no frames found under {path!r}")
    from .synth import VideoSequence
    return VideoSequence(frames=[read_frame(os.path.join(path, n)) for n in names])


def _fmt(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return repr(v) if isinstance(v, float) else v


def _cmd_eval(args):
    pred = _read_dir(args.pred)
    gt = _read_dir(args.gt)
    if len(pred.frames) != len(gt.frames):
        raise ParameterError(
            f"frame count mismatch: {len(pred.frames)} predictions vs "
            f"{len(gt.frames)} references")
    rows = []
    for i, (a, b) in enumerate(zip(pred.frames, gt.frames)):
        rows.append((i, psnr(a.data, b.data), ssim(a.data, b.data)))
    mean_psnr = sum(r[1] for r in rows) / len(rows)
    mean_ssim = sum(r[2] for r in rows) / len(rows)
    with open(args.report, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "psnr", "ssim"])
        for i, p, s in rows:
            w.writerow([i, _fmt(p), _fmt(s)])
        w.writerow(["mean", _fmt(mean_psnr), _fmt(mean_ssim)])
    print(f"psnr: {_fmt(mean_psnr)}")
    print(f"ssim: {_fmt(mean_ssim)}")
    print(f"report -> {args.report}")
    return 0


def _cmd_bench(args):
    train_cfg, data, model_cfg, out = parse_config_file(args.config)
    _apply_seed_override(train_cfg)
    params_path = out.get("params_path")
    if not params_path:
        raise ParameterError("bench config must name params_path")
    params = ParamSet.load(params_path)
    policy = ExitPolicy(enabled=True, threshold=train_cfg.threshold,
                        max_iters=train_cfg.max_iters)
    heat_dir = os.path.join(os.path.dirname(os.path.abspath(args.report)), "heatmaps")
    frame_size = (data.frame_size[0] // model_cfg.patch_size * model_cfg.patch_size,
                  data.frame_size[1] // model_cfg.patch_size * model_cfg.patch_size)
    report = bench(params, model_cfg, policy, sigmas=tuple(data.sigmas),
                   frame_size=frame_size, n_frames=data.n_frames,
                   seed=train_cfg.seed, report_path=args.report,
                   heatmap_dir=heat_dir)
    print(f"psnr (gated): {report.psnr:.3f}")
    print(f"mean iterations: {report.mean_iterations:.3f}")
    print(f"savings: {report.savings:.4f}")
    print(f"pearson r: {report.pearson_r:.4f}")
    print(f"report -> {args.report}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="cascade-denoiser",
                                 description="Cascading-refinement video denoiser")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on synthetic sequences")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("denoise", help="denoise a frame sequence")
    p.add_argument("--in", required=True, help="manifest listing noisy frames")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--params", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--no-gate", action="store_true")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.set_defaults(fn=_cmd_denoise)

    p = sub.add_parser("eval", help="PSNR/SSIM of predictions vs references")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("bench", help="mixed-noise benchmark with/without gating")
    p.add_argument("--config", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=_cmd_bench)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ParseError, ParameterError, DimensionError, DomainError,
            TrainingDivergedError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
