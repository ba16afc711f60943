"""
Gradients on the tape
=====================

Every differentiable quantity in the package is a ``Var``.  Inside a
``Tape`` context the operations applied to watched values are recorded,
and ``backward`` walks the record in reverse to produce gradients.
"""

import numpy as np

from groupmatch import Tape, grad_check
from groupmatch import autodiff as ad

# a quadratic form: loss = x . x, so the gradient is 2x
with Tape() as tape:
    x = tape.watch("x", np.array([1.0, 2.0]))
    loss = ad.vsum(x * x)
    print("loss", loss.value, "grad", tape.backward(loss)["x"])

# masked softmax puts exact zeros where the mask is off
print(ad.masked_softmax(np.array([1.0, 2.0, 3.0]), np.array([True, True, False])).value)

# finite differences confirm the tape on something less trivial
rng = np.random.default_rng(0)
params = {"w": rng.uniform(-1, 1, (3, 4)), "b": rng.uniform(-1, 1, 3)}
x_in = rng.uniform(-1, 1, 4)


def f(p):
    h = ad.leaky_relu(ad.matmul(p["w"], x_in) + p["b"], 0.2)
    return ad.vsum(ad.exp(h))


report = grad_check(f, params)
print("\n".join(report.lines()))
