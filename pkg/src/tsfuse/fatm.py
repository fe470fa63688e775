"""Prompt pooling, alignment and gated multi-scale fusion into patch tokens."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Linear, Module, Parameter, Tensor

DEFAULT_KERNELS = (3, 5, 7)


def attention_mean_pool(P: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """(1/T_p) * sum_t softmax(P W + b)_t * P_t, returned with shape (1, d_model).

    The softmax runs over the T_p prompt rows and the leading 1/T_p factor
    is kept, so the weights sum to 1/T_p.
    """
    P = ad.as_tensor(P)
    t_p = P.shape[0]
    if t_p < 1:
        raise ValueError("attention_mean_pool needs at least one prompt row")
    scores = ad.add(ad.matmul(P, W), b)  # (T_p, 1)
    weights = ad.softmax(scores, axis=0)
    pooled = ad.tsum(ad.mul(weights, P), axis=0, keepdims=True)
    return ad.scale(pooled, 1.0 / t_p)


def repeat_align(p_mean: Tensor, n: int) -> Tensor:
    """Repeat the pooled prompt row ``n`` times -> (n, d_model)."""
    if n < 1:
        raise ValueError(f"repeat_align needs n >= 1, got {n}")
    p_mean = ad.as_tensor(p_mean)
    row = ad.reshape(p_mean, (1, p_mean.shape[-1]))
    return ad.broadcast_to(row, (n, p_mean.shape[-1]))


class AttentionPool(Module):
    def __init__(self, d_model: int, rng: np.random.Generator | None = None):
        w = np.zeros((d_model, 1)) if rng is None else rng.normal(0, 1 / np.sqrt(d_model), (d_model, 1))
        self.W = Parameter(w)
        self.b = Parameter(np.zeros(1))

    def forward(self, P: Tensor) -> Tensor:
        return attention_mean_pool(P, self.W, self.b)


class MultiScaleConv(Module):
    """Depthwise convolutions along the patch axis, one per kernel size,
    concatenated on features and projected back to d_model."""

    def __init__(self, d_model: int, kernel_sizes: Sequence[int] = DEFAULT_KERNELS,
                 rng: np.random.Generator | None = None):
        for k in kernel_sizes:
            if k < 1 or k % 2 == 0:
                raise ValueError(f"kernel sizes must be odd and positive, got {k}")
        self.kernel_sizes = tuple(kernel_sizes)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kernels = [Parameter(rng.normal(0, 1 / np.sqrt(k), (d_model, k))) for k in self.kernel_sizes]
        self.biases = [Parameter(np.zeros(d_model)) for _ in self.kernel_sizes]
        self.proj = Linear(d_model * len(self.kernel_sizes), d_model, rng)

    def forward(self, x: Tensor) -> Tensor:
        n = x.shape[-2]
        for k in self.kernel_sizes:
            if k > 2 * n - 1:
                raise ValueError(f"kernel size {k} too large for {n} patches")
        feats = [ad.conv1d(x, w, b) for w, b in zip(self.kernels, self.biases)]
        return self.proj(ad.concat(feats, axis=-1))

    def set_identity(self) -> None:
        """Centre-tap kernels, zero biases and a stacked-identity projection.

        With a single kernel this makes the module the identity map.
        """
        d = self.proj.weight.shape[1]
        for w, b in zip(self.kernels, self.biases):
            w.data[:] = 0.0
            w.data[:, w.shape[1] // 2] = 1.0
            b.data[:] = 0.0
        self.proj.weight.data[:] = np.vstack([np.eye(d)] * len(self.kernel_sizes)) / len(self.kernel_sizes)
        self.proj.bias.data[:] = 0.0


def multi_scale_conv(patch_embed: Tensor, conv: MultiScaleConv) -> Tensor:
    return conv(patch_embed)


def fuse(conv_feats: Tensor, p_rep: Tensor, patch_embed: Tensor, gate: Tensor,
         mix: Linear) -> Tensor:
    """patch_embed + mix([C, s*P^r + (1 - s)*C]) with s = sigmoid(gate)."""
    shapes = {conv_feats.shape[-2:], tuple(p_rep.shape[-2:]), patch_embed.shape[-2:]}
    if len(shapes) != 1:
        raise ad.ShapeError(f"fuse: mismatched shapes conv={conv_feats.shape}, "
                            f"prompt={p_rep.shape}, patch={patch_embed.shape}")
    s = ad.sigmoid(gate)
    blended = ad.add(ad.mul(s, p_rep), ad.mul(ad.sub(1.0, s), conv_feats))
    if blended.shape != conv_feats.shape:
        blended = ad.broadcast_to(blended, conv_feats.shape)
    return ad.add(patch_embed, mix(ad.concat([conv_feats, blended], axis=-1)))


class FATM(Module):
    """Pool the prompt, align it to n patches, and gate it into the conv features."""

    def __init__(self, d_model: int, kernel_sizes: Sequence[int] = DEFAULT_KERNELS,
                 rng: np.random.Generator | None = None):
        self.pool = AttentionPool(d_model, rng)
        self.conv = MultiScaleConv(d_model, kernel_sizes, rng)
        self.gate = Parameter(np.zeros(1))
        self.mix = Linear(2 * d_model, d_model, zero=True)

    def forward(self, patch_embed: Tensor, P: Tensor | None) -> tuple[Tensor, Tensor | None]:
        """Return (fused tokens F, aligned prompt P^r or None when no prompt)."""
        n = patch_embed.shape[-2]
        conv_feats = self.conv(patch_embed)
        if P is None:
            p_rep = Tensor(np.zeros((n, patch_embed.shape[-1])))
        else:
            p_rep = repeat_align(self.pool(P), n)
        fused = fuse(conv_feats, p_rep, patch_embed, self.gate, self.mix)
        return fused, (None if P is None else p_rep)
