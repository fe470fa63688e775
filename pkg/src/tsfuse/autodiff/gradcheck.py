from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, mul, tsum


def _scalarize(out: Tensor, probe: np.ndarray | None) -> Tensor:
    if out.size == 1:
        return out
    return tsum(mul(out, probe))


def gradcheck(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], h: float = 1e-5,
              seed: int = 0) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``f`` is called as ``f(x)`` (or ``f(*x)`` for a sequence). Non-scalar
    outputs are contracted with a fixed random probe so every output
    coordinate contributes. The inputs are perturbed in place and restored.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"gradcheck: step h={h} outside [1e-7, 1e-3]")
    xs = list(x) if isinstance(x, (list, tuple)) else [x]
    call = (lambda: f(*xs)) if isinstance(x, (list, tuple)) else (lambda: f(xs[0]))

    saved = [t.requires_grad for t in xs]
    for t in xs:
        t.requires_grad = True
        t.grad = None
    out = call()
    probe = None
    if out.size != 1:
        probe = np.random.default_rng(seed).normal(size=out.shape)
    backward(_scalarize(out, probe))
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in xs]

    def value() -> float:
        o = call().data
        return float(o.reshape(-1)[0]) if probe is None else float(np.sum(o * probe))

    worst = 0.0
    for t, ga in zip(xs, analytic):
        flat = t.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = value()
            flat[i] = orig - h
            fm = value()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            err = abs(gflat[i] - num) / max(1.0, abs(gflat[i]))
            worst = max(worst, err)
    for t, rg in zip(xs, saved):
        t.requires_grad = rg
        t.grad = None
    return worst
