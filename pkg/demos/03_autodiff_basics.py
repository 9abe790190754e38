"""A quick tour of the float64 reverse-mode engine under the model.

Every layer in this package is built from these primitives, so if the
gradient of a composite comes out right here, the training loop can be
trusted to descend the real loss surface.
"""

import numpy as np

from softsed import autodiff as ad
from softsed.gradcheck import check_gradients
from softsed.nn import Parameter

# forward, then backward: d/dx sum((x @ w + 1)^2) by hand is
# 2 * (x @ w + 1) @ w.T
x = ad.Tensor(np.array([[1.0, 2.0], [3.0, -1.0]]), requires_grad=True)
w = ad.Tensor(np.array([[0.5], [-0.25]]), requires_grad=True)
y = ((x @ w + 1.0) ** 2).sum()
y.backward()
expected = 2 * (x.data @ w.data + 1.0) @ w.data.T
print(f"loss: {y.item():.4f}")
print(f"dx matches hand derivation: {np.allclose(x.grad, expected)}")

# broadcasting is handled by summing gradients back to the original
# shape, so biases and scalar scales just work
b = ad.Tensor(np.zeros(3), requires_grad=True)
z = (ad.Tensor(np.ones((4, 3))) + b).sum()
z.backward()
print(f"bias grad under broadcast: {b.grad}  (one per column, 4 rows each)")

# the numeric checker compares backward() against central differences;
# rel error around 1e-8 is float64 noise, 1e-2 is a bug
rng = np.random.default_rng(3)
p = Parameter(rng.standard_normal((5, 4)))
q = Parameter(rng.standard_normal((4, 2)))

def functional():
    h = ad.relu(p @ q)
    return (ad.sigmoid(h) ** 2).mean()

worst = check_gradients(functional, [p, q])
print(f"worst relative gradient error: {worst:.2e}")

# no_grad() turns recording off for inference-time code paths: the
# result carries no graph edges back to p and q
with ad.no_grad():
    silent = (p @ q).sum()
print(f"graph recorded under no_grad: {silent.requires_grad}")
