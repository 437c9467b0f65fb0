"""Dense float64 tensors with taped reverse-mode autodiff.

Every forward kernel is a numpy computation; every differentiable op records
its parents and an adjoint closure on a dynamic tape. Calling ``backward()``
on a scalar result replays the tape in reverse topological order and
accumulates gradients into the ``grad`` buffer of every tensor that
requires them.

Conventions:
  * all data is contiguous float64
  * image-like tensors are [B, C, H, W]
  * sampling coordinates are [B, 2, H, W] with channel 0 = x (column)
    and channel 1 = y (row), in absolute pixel units
"""

from __future__ import annotations

import contextlib
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, DomainError, NonFiniteError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- tape ---------------------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor.

        ``grad`` defaults to ones (use on scalars). Gradients accumulate
        into ``.grad`` of every reachable tensor with requires_grad.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def sigmoid(self):
        return pointwise(self, "sigmoid")

    def tanh(self):
        return pointwise(self, "tanh")

    def relu(self):
        return pointwise(self, "relu")

    def exp(self):
        return pointwise(self, "exp")

    def log(self):
        return pointwise(self, "log")


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _node(data, parents, backward):
    """Create a tape node; detaches automatically when no parent needs grad."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (adjoint of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise arithmetic --------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(out, (a, b), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(out, (a, b), backward)


def pointwise(x, kind):
    """Elementwise nonlinearity with analytic adjoint.

    kind: sigmoid | tanh | relu | exp | log
    """
    x = _as_tensor(x)
    if kind == "sigmoid":
        out = 1.0 / (1.0 + np.exp(-x.data))

        def backward(g):
            x._accumulate(g * out * (1.0 - out))

    elif kind == "tanh":
        out = np.tanh(x.data)

        def backward(g):
            x._accumulate(g * (1.0 - out * out))

    elif kind == "relu":
        out = np.maximum(x.data, 0.0)

        def backward(g):
            x._accumulate(g * (x.data > 0.0))

    elif kind == "exp":
        out = np.exp(x.data)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError("exp overflowed to inf")

        def backward(g):
            x._accumulate(g * out)

    elif kind == "log":
        if np.any(x.data <= 0.0):
            bad = int(np.argmax(x.data <= 0.0))
            raise DomainError(f"log requires strictly positive input, "
                              f"flat index {bad} is {x.data.flat[bad]!r}")
        out = np.log(x.data)

        def backward(g):
            x._accumulate(g / x.data)

    else:
        raise ValueError(f"unknown pointwise kind {kind!r}")
    return _node(out, (x,), backward)


def sqrt(x):
    """Elementwise square root; backward is floored away from zero."""
    x = _as_tensor(x)
    if np.any(x.data < 0.0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(x.data)

    def backward(g):
        x._accumulate(g * 0.5 / np.maximum(out, 1e-12))

    return _node(out, (x,), backward)


def clamp(x, lo, hi):
    x = _as_tensor(x)
    out = np.clip(x.data, lo, hi)

    def backward(g):
        x._accumulate(g * ((x.data >= lo) & (x.data <= hi)))

    return _node(out, (x,), backward)


# -- shape manipulation -------------------------------------------------------

def reshape(x, shape):
    x = _as_tensor(x)
    out = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _node(out, (x,), backward)


def transpose(x, axes):
    x = _as_tensor(x)
    axes = tuple(axes)
    out = np.ascontiguousarray(x.data.transpose(axes))
    inv = np.argsort(axes)

    def backward(g):
        x._accumulate(g.transpose(inv))

    return _node(out, (x,), backward)


def getitem(x, key):
    """Basic int/slice indexing; adjoint scatters into a zero buffer."""
    x = _as_tensor(x)
    out = x.data[key]

    def backward(g):
        buf = np.zeros_like(x.data)
        buf[key] += g
        x._accumulate(buf)

    return _node(np.ascontiguousarray(out), (x,), backward)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _node(out, tuple(tensors), backward)


def tsum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.shape).copy() if np.ndim(g) else
                          np.full(x.shape, g))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(ge, x.shape).copy())

    return _node(out, (x,), backward)


def tmean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    n = x.size if axis is None else np.prod(
        [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def matmul(a, b):
    """2-D matrix product [n,m] @ [m,p]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul needs [n,m]@[m,p], got {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _node(out, (a, b), backward)


# -- structured kernels -------------------------------------------------------

def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation, x [B,C,H,W] * weight [O,C,k,k] -> [B,O,H',W'].

    H' = (H + 2*padding - k)//stride + 1. Backward yields gradients for
    input, weight and bias.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    bias = _as_tensor(bias) if bias is not None else None
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d input must be [B,C,H,W], got rank {x.data.ndim}")
    if weight.data.ndim != 4:
        raise DimensionError(f"conv2d weight must be [O,C,k,k], got rank {weight.data.ndim}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"kernel must be square and odd, got {kh}x{kw}")
    if Cw != C:
        raise DimensionError(f"channel mismatch: input C={C}, weight expects C={Cw}")
    if bias is not None and bias.shape != (O,):
        raise DimensionError(f"bias must be [{O}], got {bias.shape}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"stride must be >=1 and padding >=0, got {stride}, {padding}")
    k, s, p = kh, stride, padding
    Ho = (H + 2 * p - k) // s + 1
    Wo = (W + 2 * p - k) // s + 1
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"kernel {k}x{k} does not fit input {H}x{W} with padding {p}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]  # [B,C,Ho,Wo,k,k]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B, Ho * Wo, C * k * k)
    wmat = weight.data.reshape(O, C * k * k)
    out = cols @ wmat.T  # [B, L, O]
    if bias is not None:
        out = out + bias.data
    out = out.transpose(0, 2, 1).reshape(B, O, Ho, Wo)

    def backward(g):
        gf = g.transpose(0, 2, 3, 1).reshape(B, Ho * Wo, O)
        if weight.requires_grad:
            gw = np.tensordot(gf, cols, axes=([0, 1], [0, 1]))  # [O, Ckk]
            weight._accumulate(gw.reshape(O, C, k, k))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = (gf @ wmat).reshape(B, Ho, Wo, C, k, k)
            gxp = np.zeros((B, C, H + 2 * p, W + 2 * p))
            for ki in range(k):
                for kj in range(k):
                    gxp[:, :, ki:ki + s * (Ho - 1) + 1:s, kj:kj + s * (Wo - 1) + 1:s] += \
                        gcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            x._accumulate(gxp[:, :, p:p + H, p:p + W])

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, backward)


def bilinear_sample(x, coords, padding="border"):
    """Sample x [B,C,H,W] at absolute positions coords [B,2,Ho,Wo].

    coords channel 0 is the x (column) target, channel 1 the y (row) target;
    the identity grid therefore reproduces the input. ``padding`` is either
    "border" (clamp to edge) or "zeros" (outside reads as 0). Differentiable
    in both the image and the coordinates.
    """
    x, coords = _as_tensor(x), _as_tensor(coords)
    if x.data.ndim != 4 or coords.data.ndim != 4 or coords.shape[1] != 2:
        raise DimensionError(
            f"expected x [B,C,H,W] and coords [B,2,Ho,Wo], got {x.shape} and {coords.shape}")
    if x.shape[0] != coords.shape[0]:
        raise DimensionError(f"batch mismatch: {x.shape[0]} vs {coords.shape[0]}")
    if padding not in ("border", "zeros"):
        raise ValueError(f"unknown padding mode {padding!r}")
    B, C, H, W = x.shape
    Ho, Wo = coords.shape[2], coords.shape[3]
    L = Ho * Wo

    cx = coords.data[:, 0].reshape(B, L)
    cy = coords.data[:, 1].reshape(B, L)
    x0 = np.floor(cx)
    y0 = np.floor(cy)
    wx = cx - x0
    wy = cy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1, y1 = x0 + 1, y0 + 1

    def clip_x(i):
        return np.clip(i, 0, W - 1)

    def clip_y(i):
        return np.clip(i, 0, H - 1)

    xf = x.data.reshape(B, C, H * W)
    corners = []
    for yi, xi in ((y0, x0), (y0, x1), (y1, x0), (y1, x1)):
        lin = clip_y(yi) * W + clip_x(xi)  # [B, L]
        v = np.take_along_axis(xf, lin[:, None, :], axis=2)  # [B, C, L]
        if padding == "zeros":
            valid = ((xi >= 0) & (xi <= W - 1) & (yi >= 0) & (yi <= H - 1)) * 1.0
            v = v * valid[:, None, :]
        else:
            valid = 1.0
        corners.append((lin, v, valid))
    (l00, v00, m00), (l01, v01, m01), (l10, v10, m10), (l11, v11, m11) = corners
    w00 = (1 - wx) * (1 - wy)
    w01 = wx * (1 - wy)
    w10 = (1 - wx) * wy
    w11 = wx * wy
    out = (v00 * w00[:, None] + v01 * w01[:, None] +
           v10 * w10[:, None] + v11 * w11[:, None]).reshape(B, C, Ho, Wo)

    def backward(g):
        gl = g.reshape(B, C, L)
        if x.requires_grad:
            gxf = np.zeros((B, C, H * W))
            bi = np.arange(B)[:, None, None]
            ci = np.arange(C)[None, :, None]
            for lin, w in ((l00, w00 * m00), (l01, w01 * m01),
                           (l10, w10 * m10), (l11, w11 * m11)):
                np.add.at(gxf, (bi, ci, lin[:, None, :]), gl * w[:, None])
            x._accumulate(gxf.reshape(x.shape))
        if coords.requires_grad:
            # d out / d cx and d cy from the bilinear weights; clamped corners
            # collapse to the same pixel so border gradients vanish naturally
            dvx = (v01 - v00) * (1 - wy)[:, None] + (v11 - v10) * wy[:, None]
            dvy = (v10 - v00) * (1 - wx)[:, None] + (v11 - v01) * wx[:, None]
            gc = np.empty((B, 2, L))
            gc[:, 0] = (gl * dvx).sum(axis=1)
            gc[:, 1] = (gl * dvy).sum(axis=1)
            coords._accumulate(gc.reshape(coords.shape))

    return _node(out, (x, coords), backward)


def avg_pool2(x):
    """2x2 average pooling, [B,C,H,W] -> [B,C,H/2,W/2]; H and W must be even."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise DimensionError(f"avg_pool2 input must be [B,C,H,W], got rank {x.data.ndim}")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise DimensionError(f"avg_pool2 needs even extents, got H={H}, W={W}")
    out = x.data.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def backward(g):
        x._accumulate(np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25)

    return _node(out, (x,), backward)


def identity_grid(h, w, batch=1):
    """Constant [batch,2,h,w] grid of absolute pixel positions (x then y)."""
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    g = np.stack([xs, ys])[None].repeat(batch, axis=0)
    return Tensor(g)


def upsample2(x):
    """Bilinear x2 upsampling of [B,C,H,W] via half-pixel-aligned sampling."""
    B, C, H, W = _as_tensor(x).shape
    ys, xs = np.meshgrid(np.arange(2 * H, dtype=np.float64),
                         np.arange(2 * W, dtype=np.float64), indexing="ij")
    coords = np.stack([(xs + 0.5) / 2.0 - 0.5, (ys + 0.5) / 2.0 - 0.5])[None]
    coords = Tensor(np.repeat(coords, B, axis=0))
    return bilinear_sample(x, coords, padding="border")


# -- parameter sets -----------------------------------------------------------

_PSET_MAGIC = b"PSET"
_PSET_VERSION = 1


class ParamSet:
    """Ordered named map of trainable tensors."""

    def __init__(self):
        self._params = {}

    def add(self, name, tensor):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def count_scalars(self):
        return sum(t.size for t in self._params.values())

    def copy(self):
        ps = ParamSet()
        for name, t in self._params.items():
            ps.add(name, Tensor(t.data.copy(), requires_grad=True))
        return ps

    # Flat binary layout: magic, version u32, count u32, then per parameter
    # name_len u32 | name utf-8 | rank u32 | extents u32*rank | float64 LE data.
    def save(self, path):
        with open(path, "wb") as f:
            f.write(_PSET_MAGIC)
            f.write(struct.pack("<II", _PSET_VERSION, len(self._params)))
            for name, t in self._params.items():
                nb = name.encode("utf-8")
                f.write(struct.pack("<I", len(nb)))
                f.write(nb)
                f.write(struct.pack("<I", t.data.ndim))
                f.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
                f.write(t.data.astype("<f8", copy=False).tobytes())

    @classmethod
    def load(cls, path):
        from .errors import ParseError
        with open(path, "rb") as f:
            blob = f.read()
        pos = 0

        def take(n, what):
            nonlocal pos
            if pos + n > len(blob):
                raise ParseError(f"truncated ParamSet file while reading {what}", offset=pos)
            piece = blob[pos:pos + n]
            pos += n
            return piece

        if take(4, "magic") != _PSET_MAGIC:
            raise ParseError("bad ParamSet magic", offset=0)
        version, count = struct.unpack("<II", take(8, "header"))
        if version != _PSET_VERSION:
            raise ParseError(f"unsupported ParamSet version {version}", offset=4)
        ps = cls()
        for _ in range(count):
            (nlen,) = struct.unpack("<I", take(4, "name length"))
            name = take(nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", take(4, "rank"))
            extents = struct.unpack(f"<{rank}I", take(4 * rank, "extents"))
            n = int(np.prod(extents)) if rank else 1
            data = np.frombuffer(take(8 * n, f"data of {name!r}"), dtype="<f8")
            ps.add(name, Tensor(data.reshape(extents).copy(), requires_grad=True))
        return ps


# -- gradient checking ---------------------------------------------------------

@dataclass
class GradCheckEntry:
    input_index: int
    max_rel_err: float
    worst_position: tuple
    checked: int


@dataclass
class GradCheckReport:
    tol: float
    entries: list = field(default_factory=list)
    failure: str | None = None

    @property
    def passed(self):
        if self.failure is not None:
            return False
        return all(e.max_rel_err < self.tol for e in self.entries)

    @property
    def max_rel_err(self):
        return max((e.max_rel_err for e in self.entries), default=0.0)


def grad_check(op, inputs, tol=1e-3, step=1e-5, max_entries=64, seed=0):
    """Compare analytic gradients of a scalar reduction of ``op(*inputs)``
    against central finite differences.

    The reduction is a fixed random projection so that sign errors cannot
    cancel. Large inputs are spot-checked at ``max_entries`` seeded
    positions. Passes iff every sampled relative error is below ``tol``.
    """
    rng = np.random.default_rng(seed)
    inputs = [_as_tensor(t) for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None

    out = op(*inputs)
    proj = Tensor(rng.standard_normal(out.shape))

    def scalar():
        with no_grad():
            return tsum(mul(op(*inputs), proj)).item()

    loss = tsum(mul(out, proj))
    loss.backward()

    report = GradCheckReport(tol=tol)
    for idx, t in enumerate(inputs):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(analytic)):
            bad = np.unravel_index(int(np.argmax(~np.isfinite(analytic))), t.shape)
            report.failure = f"non-finite analytic gradient in input {idx} at {bad}"
            return report
        flat_positions = np.arange(t.size)
        if t.size > max_entries:
            flat_positions = rng.choice(t.size, size=max_entries, replace=False)
        worst, worst_pos = 0.0, ()
        for fp in flat_positions:
            orig = t.data.flat[fp]
            t.data.flat[fp] = orig + step
            f_plus = scalar()
            t.data.flat[fp] = orig - step
            f_minus = scalar()
            t.data.flat[fp] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic.flat[fp]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
            if rel > worst:
                worst = rel
                worst_pos = np.unravel_index(int(fp), t.shape)
        report.entries.append(GradCheckEntry(idx, worst, worst_pos, len(flat_positions)))
    return report
