"""A short tour of the autodiff engine and the finite-difference checks.

Run: python demos/01_autodiff_tour.py
"""
import numpy as np

from tsfuse import autodiff as ad
from tsfuse.autodiff import Tensor, gradcheck, make_rng
from tsfuse.checks import gradcheck_suite

# %% A tiny graph: f(x) = sum(sigmoid(x W)^2), then reverse-mode gradients.
rng = make_rng(0)
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
W = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
f = ad.tsum(ad.square(ad.sigmoid(ad.matmul(x, W))))
f.backward()
print("f =", f.item())
print("df/dW =\n", W.grad)

# %% The analytic gradient agrees with central differences.
err = gradcheck(lambda a, b: ad.tsum(ad.square(ad.sigmoid(ad.matmul(a, b)))), [x, W])
print(f"max relative error vs finite differences: {err:.2e}")

# %% Every model component, 10 random points each.
for name, worst in gradcheck_suite(points=10).items():
    print(f"{name:22s} {worst:.2e}")
