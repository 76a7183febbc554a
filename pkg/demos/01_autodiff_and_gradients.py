"""Reverse-mode automatic differentiation on small dense graphs.

Builds a two-layer computation by hand, backpropagates, and checks one
gradient entry against a central finite difference, then shows the
guard rails: non-finite values are refused, and no graph is recorded
inside the no_grad context.
"""

import numpy as np

import protoscope.autodiff as ad

rng = np.random.default_rng(0)

# a tiny two-layer network with a softplus nonlinearity
x = ad.Tensor(rng.normal(size=(4, 3)))
w1 = ad.Tensor(rng.normal(size=(3, 5)), requires_grad=True)
w2 = ad.Tensor(rng.normal(size=(5, 2)), requires_grad=True)
b = ad.Tensor(np.zeros(5), requires_grad=True)

hidden = ad.softplus(ad.add_bias(ad.matmul(x, w1), b))
out = ad.matmul(hidden, w2)
loss = ad.reduce_mean(ad.pow_const(out, 2.0))
print(f"loss = {loss.item():.6f}")

loss.backward()
print("gradient shapes:",
      {name: g.shape for name, g in
       [("w1", w1.grad), ("w2", w2.grad), ("b", b.grad)]})

# verify one entry of dloss/dw1 numerically
eps = 1e-6


def loss_at(v):
    w1_probe = ad.Tensor(v)
    h = ad.softplus(ad.add_bias(ad.matmul(x, w1_probe), b))
    return ad.reduce_mean(ad.pow_const(ad.matmul(h, w2), 2.0)).item()


probe = w1.values.copy()
probe[1, 2] += eps
up = loss_at(probe)
probe[1, 2] -= 2 * eps
down = loss_at(probe)
numeric = (up - down) / (2 * eps)
print(f"dloss/dw1[1,2]: autodiff {w1.grad[1, 2]:+.8f} "
      f"numeric {numeric:+.8f}")

# the graph is not recorded under no_grad, so backward has nothing to do
with ad.no_grad():
    silent = ad.matmul(x, w1)
print("no_grad output keeps values but records no parents:",
      silent.values.shape, "parents:", silent._parents)

# out-of-domain inputs raise instead of propagating NaN
try:
    ad.log(ad.Tensor(np.array([1.0, 0.0, -1.0])))
except Exception as e:
    print(f"refused out-of-domain input: {type(e).__name__}: {e}")
