"""
Reverse-mode gradients on a tape
================================

Every operation on a Tensor that requires a gradient records a node. Calling
backward on a scalar walks those nodes in reverse and leaves .grad on the
leaves. Here we compare that against central differences.
"""

import numpy as np

from xception1d import tensor as T
from xception1d.tensor import Tensor

# d/dx sum(x * x) = 2x
x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
T.backward((x * x).sum())
print("grad of sum(x^2):", x.grad)

# a tape is consumed by backward, asking twice is an error
y = (x * 3.0).sum()
T.backward(y)
try:
    T.backward(y)
except T.GraphError as exc:
    print("second backward:", exc)

# a strided convolution followed by a relu, checked against finite differences
rng = np.random.default_rng(0)
w = Tensor(rng.normal(size=(4, 2, 5)))
r = Tensor(rng.normal(size=(1, 4, 10)))


def f(t):
    return (T.relu(T.conv1d(t, w, stride=2)) * r).sum()


err = T.grad_check(f, rng.normal(size=(1, 2, 20)), h=1e-4)
print(f"conv + relu max relative error: {err:.2e}")

# float32 stays float32 through the graph
z = Tensor(np.ones(3, dtype=np.float32)) * 2.0 + 1.0
print("dtype:", z.dtype)
