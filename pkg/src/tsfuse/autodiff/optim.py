from __future__ import annotations

from typing import Iterable

import numpy as np

from .nn import Parameter


class NonFiniteGradientError(FloatingPointError):
    pass


class Adam:
    """Adam that leaves frozen parameters untouched.

    With ``sgd=True`` the update degrades to plain gradient descent,
    ``p -= lr * grad``. Gradients are zeroed after every step.
    """

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 sgd: bool = False):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.sgd = sgd
        self.t = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.frozen or p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(f"non-finite gradient in parameter {p.name or '<unnamed>'}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            if p.frozen or p.grad is None:
                continue
            g = p.grad
            if self.sgd:
                p.data -= self.lr * g
                continue
            key = id(p)
            m = self._m.get(key)
            if m is None:
                m = self._m[key] = np.zeros_like(p.data)
                self._v[key] = np.zeros_like(p.data)
            v = self._v[key]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / (1.0 - b1 ** self.t)
            vhat = v / (1.0 - b2 ** self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        self.zero_grad()


def optimizer_step(params: Iterable[Parameter], lr: float, sgd: bool = False) -> None:
    """One stateless step (SGD, or the first Adam step when ``sgd`` is False)."""
    Adam(params, lr=lr, sgd=sgd).step()
