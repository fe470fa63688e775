"""Parameters, a tiny module system, and seeded initialization."""

from __future__ import annotations

import hashlib
from typing import Iterator

import numpy as np

from .tensor import Tensor, layer_norm, matmul, add


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator; ``stream`` keys derive independent substreams."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(stream))
    return np.random.Generator(np.random.Philox(ss))


class Parameter(Tensor):
    """A leaf tensor owned by a module.

    Frozen parameters never require a gradient and are skipped by the
    optimizer; ``name`` is filled in with the hierarchical attribute path
    when the owning module enumerates its parameters.
    """

    def __init__(self, data, frozen: bool = False, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=not frozen)
        self.frozen = frozen
        self.name = name

    @property
    def tensor(self) -> Tensor:
        return self

    def freeze(self) -> None:
        self.frozen = True
        self.requires_grad = False
        self.grad = None

    def __repr__(self) -> str:
        tag = "frozen" if self.frozen else "trainable"
        return f"Parameter({self.name!r}, shape={self.shape}, {tag})"


class Module:
    """Container whose ``Parameter`` and ``Module`` attributes form a tree."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield f"{path}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def assign_names(self) -> None:
        """Stamp each parameter with its attribute path from this module."""
        for path, p in self.named_parameters():
            p.name = path

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if not p.frozen]

    def freeze(self) -> None:
        for p in self.parameters():
            p.freeze()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self, trainable_only: bool = False) -> int:
        return sum(p.size for p in self.parameters() if not (trainable_only and p.frozen))

    def checksum(self) -> str:
        """SHA-256 over every parameter's name and raw bytes."""
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """y = x W + b with W of shape (d_in, d_out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None = None,
                 std: float | None = None, bias: bool = True, zero: bool = False):
        if zero or rng is None:
            w = np.zeros((d_in, d_out))
        else:
            s = std if std is not None else 1.0 / np.sqrt(d_in)
            w = rng.normal(0.0, s, size=(d_in, d_out))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x) -> Tensor:
        y = matmul(x, self.weight)
        return add(y, self.bias) if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))

    def forward(self, x) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)
