"""
Reverse-mode autodiff on numpy arrays
=====================================

Build a tiny expression, pull gradients off the tape, check them against
central differences, and take one AdamW step.
"""
import numpy as np

from editflow import numerics as nx

# leaves that want gradients
w = nx.Tensor(np.array([[0.5, -1.0], [2.0, 0.25]]), requires_grad=True)
x = nx.Tensor(np.array([[1.0, 3.0]]))

y = nx.softmax(x @ w)
loss = nx.sum_(y * y)
grads = nx.backward(loss)
print("loss", loss.data, "\ndL/dw\n", grads[w].data)

# the tape is single use: interior nodes are consumed by the first backward
try:
    nx.backward(loss)
except nx.TapeError as e:
    print("second backward:", e)

# same function through the finite-difference oracle (runs in float64)
err = nx.fd_check(lambda a: nx.sum_(nx.softmax(x @ a) ** 2.0), [w.data])
print("max relative error vs central differences: %.2e" % err)

# decoupled weight decay: zero gradient still shrinks the weight by lr * wd
p = {"w": nx.Tensor(np.ones(3), requires_grad=True)}
state = nx.OptimizerState()
nx.adamw_step(p, {"w": np.zeros(3)}, state, lr=1e-4, weight_decay=0.01)
print("after one decay-only step:", p["w"].data, "(1 - 1e-6)")
