"""
The autodiff core
=================

Every model component sits on a small reverse-mode engine over float64
arrays.  This script builds a two-layer network by hand, differentiates
it, checks the result against finite differences and then breaks a
backward rule on purpose to watch the checker catch it.
"""

import numpy as np

from rmk.numerics import Tensor, backward, check_parameters, grad_check, inject_gradient_fault, ops

rng = np.random.default_rng(0)

# A tensor records how it was made only if something upstream wants a gradient.
x = Tensor(rng.standard_normal((4, 3)))
w1 = Tensor(rng.standard_normal((3, 5)) * 0.5, requires_grad=True, name="w1")
w2 = Tensor(rng.standard_normal((5, 2)) * 0.5, requires_grad=True, name="w2")


def loss():
    hidden = ops.tanh(ops.matmul(x, w1))
    probs = ops.softmax(ops.matmul(hidden, w2), axis=-1)
    return ops.sum(ops.mul(probs, probs))


out = loss()
backward(out, [w1, w2])
print("loss", float(out.data))
print("dL/dw1 row 0", np.round(w1.grad[0], 4))

# check_parameters perturbs a few entries of each parameter and compares
# central differences with the analytic gradient.
errors = check_parameters(loss, {"w1": w1, "w2": w2}, eps=1e-5, per_param=6, seed=0)
for name, err in errors.items():
    print(f"{name}: max relative error {err:.2e}")

# The same check on a single primitive, first intact, then with the tanh
# backward rule scaled by 1.5.
print("tanh intact   ", grad_check(ops.tanh, x))
with inject_gradient_fault("tanh", 1.5):
    print("tanh corrupted", grad_check(ops.tanh, x))

# Masked softmax puts exactly zero weight on masked entries and returns an
# all-zero row when nothing is left to attend to.
scores = Tensor(np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]))
mask = np.array([[True, False, True], [False, False, False]])
print(ops.softmax(scores, axis=-1, mask=mask).data)
