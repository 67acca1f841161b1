"""The autodiff engine: a tiny regression, then the finite-difference check.

Run: python3 demos/02_autodiff_gradcheck.py
"""
import numpy as np

from dettraj import autodiff as ad
from dettraj.gradcheck import run_all

rng = np.random.default_rng(0)
X = rng.normal(size=(64, 3))
y = X @ np.array([[1.0], [-2.0], [0.5]]) + 0.1

W = ad.Tensor(np.zeros((3, 1)), requires_grad=True)
b = ad.Tensor(np.zeros(1), requires_grad=True)
for step in range(200):
    W.grad, b.grad = None, None
    loss = ad.mse(ad.add(ad.matmul(X, W), b), y)
    loss.backward()
    W.data -= 0.1 * W.grad
    b.data -= 0.1 * b.grad
    if step in (0, 5, 10, 20, 40, 199):
        print(f"step {step:3d}  mse {loss.item():.5f}")
print("learned W", W.data.ravel().round(3), "b", b.data.round(3))

# Every primitive, and the whole model plus its losses, against central differences.
errs, worst = run_all(seed=0)
for name, e in sorted(errs.items(), key=lambda kv: -kv[1])[:5]:
    print(f"  {name:16s} {e:.2e}")
print(f"max relative error over {len(errs)} checks: {worst:.2e}")
