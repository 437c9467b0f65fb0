"""Tour of the tensor core: taped ops, analytic adjoints, gradient checking.

Every kernel the denoiser uses (convolution, bilinear sampling, pooling,
pointwise nonlinearities) carries an analytic backward pass; grad_check
compares each one against central finite differences.
"""

import numpy as np

from cascade_denoiser import (ParamSet, Tensor, avg_pool2, bilinear_sample,
                              conv2d, grad_check, identity_grid, pointwise)

rng = np.random.default_rng(0)

# forward + backward through a small conv stack
x = Tensor(rng.standard_normal((1, 2, 8, 8)), requires_grad=True)
w = Tensor(rng.standard_normal((4, 2, 3, 3)) * 0.2, requires_grad=True)
b = Tensor(np.zeros(4), requires_grad=True)
y = pointwise(conv2d(x, w, b, stride=1, padding=1), "relu")
loss = (y * y).mean()
loss.backward()
print("loss:", loss.item())
print("grad shapes:", x.grad.shape, w.grad.shape, b.grad.shape)

# the identity grid makes bilinear sampling a no-op
g = identity_grid(8, 8)
warped = bilinear_sample(Tensor(x.data), g)
print("identity warp max |diff|:", np.abs(warped.data - x.data).max())

# pooling preserves total mass
pooled = avg_pool2(Tensor(x.data))
print("mass ratio:", pooled.data.sum() * 4 / x.data.sum())

# finite-difference audit of the convolution
report = grad_check(lambda a, ww, bb: conv2d(a, ww, bb, 1, 1),
                    [Tensor(x.data), Tensor(w.data), Tensor(b.data)], tol=1e-3)
print("conv2d grad check passed:", report.passed,
      "max rel err:", f"{report.max_rel_err:.2e}")

# parameters round-trip bit-exactly through the flat binary format
ps = ParamSet()
ps.add("demo.w", Tensor(w.data.copy(), requires_grad=True))
ps.save("/tmp/demo_params.bin")
back = ParamSet.load("/tmp/demo_params.bin")
print("param roundtrip exact:", back["demo.w"].data.tobytes() == w.data.tobytes())
