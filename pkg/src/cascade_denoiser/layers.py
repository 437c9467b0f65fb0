"""Convolution-layer plumbing shared by the sub-networks.

Parameters live in a flat ParamSet under dotted names ("<layer>.w",
"<layer>.b"); weights and biases are drawn uniformly from
+-sqrt(1/fan_in) with a caller-supplied generator so that model
construction is reproducible.
"""

from __future__ import annotations

import numpy as np

from .tensor import ParamSet, Tensor, conv2d


def register_conv(params: ParamSet, name: str, cin: int, cout: int, k: int,
                  rng: np.random.Generator):
    bound = float(np.sqrt(1.0 / (cin * k * k)))
    params.add(f"{name}.w", Tensor(rng.uniform(-bound, bound, (cout, cin, k, k)),
                                   requires_grad=True))
    params.add(f"{name}.b", Tensor(rng.uniform(-bound, bound, (cout,)),
                                   requires_grad=True))


def conv(params: ParamSet, name: str, x, stride=1, padding=None):
    w = params[f"{name}.w"]
    if padding is None:
        padding = w.shape[2] // 2  # same-size output at stride 1
    return conv2d(x, w, params[f"{name}.b"], stride=stride, padding=padding)


def register_resblock(params: ParamSet, name: str, ch: int, rng):
    register_conv(params, f"{name}.c1", ch, ch, 3, rng)
    register_conv(params, f"{name}.c2", ch, ch, 3, rng)


def resblock(params: ParamSet, name: str, x):
    h = conv(params, f"{name}.c1", x).relu()
    return x + conv(params, f"{name}.c2", h)
