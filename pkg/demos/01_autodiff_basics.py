"""Tape-based reverse-mode differentiation on plain float64 arrays.

Every op records its inputs and a backward closure; calling backward() on a
scalar walks the tape once in reverse topological order.
"""

import numpy as np

from crossrec import autodiff as ad
from crossrec.autodiff import Tensor, gradient_check

# a quadratic bowl: d/dx sum(x^2) = 2x
x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
loss = ad.tsum(x ** 2)
loss.backward()
print("sum(x^2) at [1,2,3]:", float(loss.data))
print("gradient:", x.grad)  # [2, 4, 6]

# reusing a tensor accumulates gradient contributions
y = Tensor(2.0, requires_grad=True)
out = y * y + y  # d/dy = 2y + 1 = 5
out.backward()
print("d(y*y+y)/dy at 2:", y.grad)

# broadcasting works like numpy; gradients un-broadcast back to each shape
w = Tensor(np.ones((3, 2)), requires_grad=True)
b = Tensor(np.zeros(2), requires_grad=True)
z = ad.tsum(ad.relu(Tensor(np.array([[1.0, -2.0, 0.5]])) @ w + b))
z.backward()
print("bias grad shape:", b.grad.shape)

# masked softmax: excluded entries come out exactly 0.0, not merely small
scores = Tensor(np.array([[2.0, 1.0, -1.0]]))
mask = np.array([[True, True, False]])
p = ad.masked_softmax(scores, mask)
print("masked prob is exact zero:", p.data[0, 2] == 0.0)

# finite-difference audit of an arbitrary composite
a = Tensor(np.random.default_rng(0).normal(0, 1, (4, 3)), requires_grad=True)
def f():
    h = ad.softmax(a)
    return ad.tsum(ad.log(h + Tensor(1e-3)) * Tensor(np.arange(3, dtype=np.float64)))
err = gradient_check(f, [a], eps=1e-4)
print(f"gradient check rel err: {err:.2e}")

# any non-finite intermediate aborts immediately instead of propagating NaNs
try:
    ad.log(Tensor(0.0))
except Exception as exc:
    print("log(0) ->", type(exc).__name__)
