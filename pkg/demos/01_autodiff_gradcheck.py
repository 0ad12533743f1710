"""
Reverse-mode gradients and finite-difference checks
===================================================

Build a small graph with a dilated convolution, backpropagate through it and
compare the result with central differences.
"""

import numpy as np

from afnet import autograd as ag

rng = np.random.default_rng(0)
x = rng.standard_normal((1, 1, 9, 9))
k = rng.standard_normal((2, 1, 3, 3))

# A dilation of 2 spreads the 3x3 taps over a 5x5 footprint; padding 2 keeps
# the spatial size.
y = ag.conv2d(x, k, dilation=2, padding=2)
print("output shape", y.shape)


# Scalarize with ELU and a sum, then ask for gradients of the leaves.
def loss(p):
    return ag.sum_all(ag.activation(ag.conv2d(p["x"], p["k"], dilation=2, padding=2), "elu"))


leaves = {"x": ag.Tensor(x, requires_grad=True), "k": ag.Tensor(k, requires_grad=True)}
grads = ag.backward(loss(leaves))
print("d loss / d kernel[0, 0]:\n", np.round(grads[leaves["k"]][0, 0], 4))

# grad_check repeats the computation with central differences.
report = ag.grad_check(loss, {"x": x, "k": k}, tolerance=1e-4)
print("relative errors:", {name: f"{err:.1e}" for name, err in report.errors.items()})
print("passed:", report.passed)
