"""Synthetic video generation, controllable noise, and Netpbm frame I/O.

Frames are Tensor[C,H,W] in [0,1]. Storage is 16-bit binary PGM (P5,
grayscale) or PPM (P6, color) with big-endian samples; a sequence manifest
is a plain text file listing frame paths in order, one per line.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ParseError
from .tensor import Tensor

TEXTURES = ("gradient", "checker", "perlin")


@dataclass
class VideoSequence:
    """Ordered frames sharing one geometry; clean frames stay in [0,1]."""
    frames: list = field(default_factory=list)
    frame_rate: float = 24.0
    noise_level: list | None = None  # optional per-frame sigma, metadata

    def __post_init__(self):
        shapes = {f.shape for f in self.frames}
        if len(shapes) > 1:
            raise ParameterError(f"frames disagree on shape: {sorted(shapes)}")

    def __len__(self):
        return len(self.frames)

    @property
    def shape(self):
        return self.frames[0].shape


def _texture(kind, H, W, rng):
    if kind == "gradient":
        ys, xs = np.meshgrid(np.linspace(0, 1, H), np.linspace(0, 1, W), indexing="ij")
        a, b = rng.uniform(0.3, 1.0, 2)
        img = (a * xs + b * ys) / (a + b)
    elif kind == "checker":
        cell = int(rng.integers(2, 6))
        ys, xs = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
        img = (((ys // cell) + (xs // cell)) % 2).astype(np.float64)
        img = 0.15 + 0.7 * img
    elif kind == "perlin":
        # value noise: bilinear upsampling of random lattices; the finest
        # octave is near pixel scale so frames carry real high-frequency
        # detail that single-frame smoothing cannot recover
        img = np.zeros((H, W))
        fine = max(H, W) // 2
        for cells, amp in ((4, 0.4), (8, 0.25), (16, 0.15), (fine, 0.2)):
            cells = min(cells, H - 1, W - 1)
            lattice = rng.uniform(0, 1, (cells + 1, cells + 1))
            ys = np.linspace(0, cells, H, endpoint=False)
            xs = np.linspace(0, cells, W, endpoint=False)
            y0 = ys.astype(int)
            x0 = xs.astype(int)
            fy = (ys - y0)[:, None]
            fx = (xs - x0)[None, :]
            v = (lattice[y0][:, x0] * (1 - fy) * (1 - fx)
                 + lattice[y0][:, x0 + 1] * (1 - fy) * fx
                 + lattice[y0 + 1][:, x0] * fy * (1 - fx)
                 + lattice[y0 + 1][:, x0 + 1] * fy * fx)
            img += amp * v
    else:
        raise ParameterError(f"unknown texture {kind!r}, expected one of {TEXTURES}")
    return np.clip(img, 0.0, 1.0)


def _translate(img, dx, dy):
    """Shift [C,H,W] content by (+dx,+dy) pixels, clamp-to-edge fill, bilinear."""
    C, H, W = img.shape
    ys, xs = np.meshgrid(np.arange(H, dtype=np.float64),
                         np.arange(W, dtype=np.float64), indexing="ij")
    sx = np.clip(xs - dx, 0, W - 1)
    sy = np.clip(ys - dy, 0, H - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = sx - x0
    fy = sy - y0
    out = (img[:, y0, x0] * (1 - fy) * (1 - fx) + img[:, y0, x1] * (1 - fy) * fx
           + img[:, y1, x0] * fy * (1 - fx) + img[:, y1, x1] * fy * fx)
    return out


def synth_sequence(seed, n_frames, size, motion, texture="perlin", channels=1):
    """Clean sequence: frame k is frame 0 translated by k*motion.

    motion is an (dx, dy) pixel displacement per frame (may be fractional);
    fill is clamp-to-edge. Deterministic in (seed, arguments).
    """
    if n_frames < 3:
        raise ParameterError(f"need n_frames >= 3, got {n_frames}")
    H, W = size
    dx, dy = float(motion[0]), float(motion[1])
    if abs(dx) * (n_frames - 1) >= W or abs(dy) * (n_frames - 1) >= H:
        raise ParameterError(
            f"total motion ({dx * (n_frames - 1)}, {dy * (n_frames - 1)}) exceeds "
            f"frame size {W}x{H}")
    rng = np.random.default_rng(seed)
    base = np.stack([_texture(texture, H, W, rng) for _ in range(channels)])
    frames = [Tensor(_translate(base, k * dx, k * dy)) for k in range(n_frames)]
    return VideoSequence(frames=frames)


def add_noise(seq, model="gaussian", sigma=0.1, a=0.0, b=0.0, sigma_map=None, seed=0):
    """Noisy copy of ``seq``; clean frames are left untouched in the caller.

    model: "gaussian" (sigma, or a per-pixel [H,W] sigma_map) or
    "poisson_gaussian" with signal-dependent variance a*x + b. Output is
    clipped to [0,1]. Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    noisy = []
    levels = []
    for f in seq.frames:
        x = f.data
        if model == "gaussian":
            if sigma_map is not None:
                s = sigma_map.data if isinstance(sigma_map, Tensor) else np.asarray(sigma_map)
                if s.shape != x.shape[1:]:
                    raise ParameterError(
                        f"sigma_map shape {s.shape} does not match frame {x.shape[1:]}")
                if np.any(s < 0):
                    raise ParameterError("sigma_map must be non-negative")
                n = rng.standard_normal(x.shape) * s
                levels.append(float(s.mean()))
            else:
                if sigma < 0:
                    raise ParameterError(f"sigma must be >= 0, got {sigma}")
                n = rng.standard_normal(x.shape) * sigma
                levels.append(float(sigma))
        elif model == "poisson_gaussian":
            if a < 0 or b < 0:
                raise ParameterError(f"need a, b >= 0, got a={a}, b={b}")
            var = np.maximum(a * x + b, 0.0)
            n = rng.standard_normal(x.shape) * np.sqrt(var)
            levels.append(float(np.sqrt(var).mean()))
        else:
            raise ParameterError(f"unknown noise model {model!r}")
        noisy.append(Tensor(np.clip(x + n, 0.0, 1.0)))
    return VideoSequence(frames=noisy, frame_rate=seq.frame_rate, noise_level=levels)


# -- Netpbm 16-bit I/O ---------------------------------------------------------

_MAXVAL = 65535


def write_frame(path, frame):
    """Write Tensor[C,H,W] in [0,1] as 16-bit P5 (C=1) or P6 (C=3)."""
    data = frame.data if isinstance(frame, Tensor) else np.asarray(frame)
    if data.ndim != 3 or data.shape[0] not in (1, 3):
        raise ParameterError(f"frame must be [1,H,W] or [3,H,W], got {data.shape}")
    C, H, W = data.shape
    magic = b"P5" if C == 1 else b"P6"
    q = np.round(np.clip(data, 0.0, 1.0) * _MAXVAL).astype(">u2")
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n%d\n" % (W, H, _MAXVAL))
        f.write(q.transpose(1, 2, 0).tobytes())


def read_frame(path):
    """Read a 16-bit P5/P6 file back to Tensor[C,H,W] in [0,1]."""
    with open(path, "rb") as f:
        blob = f.read()

    pos = 0

    def token():
        nonlocal pos
        while pos < len(blob):
            c = blob[pos:pos + 1]
            if c == b"#":
                while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("unexpected end of header", offset=start)
        return blob[start:pos], start

    magic, off = token()
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"unsupported magic {magic!r}", offset=off)
    C = 1 if magic == b"P5" else 3
    dims = []
    for what in ("width", "height", "maxval"):
        tok, off = token()
        if not tok.isdigit():
            raise ParseError(f"non-numeric {what} {tok!r}", offset=off)
        dims.append(int(tok))
    W, H, maxval = dims
    if maxval != _MAXVAL:
        raise ParseError(f"expected maxval {_MAXVAL}, got {maxval}", offset=off)
    pos += 1  # single whitespace after maxval
    need = W * H * C * 2
    if len(blob) - pos < need:
        raise ParseError(f"truncated pixel data, need {need} bytes", offset=pos)
    raw = np.frombuffer(blob[pos:pos + need], dtype=">u2")
    img = raw.reshape(H, W, C).transpose(2, 0, 1).astype(np.float64) / _MAXVAL
    return Tensor(img)


def write_manifest(path, frame_paths):
    with open(path, "w") as f:
        for p in frame_paths:
            f.write(f"{p}\n")


def read_manifest(path):
    """Resolve the listed frame paths (relative to the manifest's directory)."""
    base = os.path.dirname(os.path.abspath(path))
    frames = []
    with open(path) as f:
        for ln, line in enumerate(f, start=1):
            name = line.strip()
            if not name or name.startswith("#"):
                continue
            fp = name if os.path.isabs(name) else os.path.join(base, name)
            if not os.path.exists(fp):
                raise ParseError(f"manifest entry {name!r} does not exist", line=ln)
            try:
                frames.append(read_frame(fp))
            except ParseError as e:
                raise ParseError(f"bad frame {name!r}: {e}", line=ln) from e
    if not frames:
        raise ParseError("manifest lists no frames", line=1)
    return VideoSequence(frames=frames)


def write_sequence(directory, seq, prefix="frame"):
    """Write all frames plus a manifest.txt; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    ext = "pgm" if seq.frames[0].shape[0] == 1 else "ppm"
    names = []
    for i, f in enumerate(seq.frames):
        name = f"{prefix}_{i:04d}.{ext}"
        write_frame(os.path.join(directory, name), f)
        names.append(name)
    manifest = os.path.join(directory, "manifest.txt")
    write_manifest(manifest, names)
    return manifest
