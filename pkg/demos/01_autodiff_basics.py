"""A tour of the reverse-mode autodiff core.

Everything in the package runs on one Tensor type and a tape: operations
executed inside a `with Tape()` block are recorded, and `tape.backward(loss)`
replays them in reverse to fill in gradients. This script builds a few small
graphs by hand and checks one of them against finite differences.

Run from the repository root:

    python3 demos/01_autodiff_basics.py
"""

import numpy as np

from fpb.autodiff import (
    Tape,
    Tensor,
    constant,
    finite_difference_check,
    matmul,
    mul,
    sigmoid,
    softmax,
    tanh,
    tsum,
)

print("=== a scalar chain ===")
# loss = sum(w * w) has gradient 2w
w = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
with Tape() as tape:
    loss = tsum(mul(w, w))
    tape.backward(loss)
print(f"w        = {w.data}")
print(f"loss     = {loss.data[0]:.1f}")
print(f"dloss/dw = {w.grad}  (expected 2w)")

print()
print("=== gradients accumulate across uses ===")
# y = w*w + w uses w twice; both paths contribute
w = Tensor(np.array([4.0]), requires_grad=True)
with Tape() as tape:
    y = tsum(mul(w, w))
    z = tsum(w)
    tape.backward(y + z)
print(f"d(w^2 + w)/dw at w=4: {w.grad[0]:.1f}  (expected 9)")

print()
print("=== the usual nonlinearities ===")
x = constant(np.array([[0.0, 1.0, -1.0]]))
print(f"sigmoid(0, 1, -1) = {sigmoid(x).data.round(4)}")
print(f"tanh(0, 1, -1)    = {tanh(x).data.round(4)}")
print(f"softmax of zeros  = {softmax(constant(np.zeros((1, 4)))).data}")

print()
print("=== a tiny network against finite differences ===")
# one hidden layer; the check perturbs every parameter entry by +-eps and
# compares the analytic gradient with the central difference
rng = np.random.default_rng(0)
w1 = Tensor(rng.standard_normal((3, 4)) * 0.5, requires_grad=True)
w2 = Tensor(rng.standard_normal((4, 1)) * 0.5, requires_grad=True)
x = constant(rng.standard_normal((5, 3)))


def loss_fn(params):
    h = tanh(matmul(x, w1))
    out = matmul(h, w2)
    return tsum(mul(out, out))


err = finite_difference_check(loss_fn, [w1, w2], eps=1e-5)
print(f"max relative error over {w1.data.size + w2.data.size} entries: {err:.2e}")
assert err < 1e-6
print("analytic gradients match finite differences.")
