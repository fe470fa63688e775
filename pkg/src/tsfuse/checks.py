"""Finite-difference gradient checks for every differentiable building block."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Linear, Tensor, gradcheck, make_rng
from .backbone import BackboneConfig, Block, causal_mask
from .fatm import MultiScaleConv, attention_mean_pool, fuse, repeat_align
from .heads import (EnhancementHead, forecasting_loss, imputation_loss, total_loss)

D, N, T_P, P = 8, 5, 4, 6


def _t(rng, *shape) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _pool(rng):
    return (lambda P_, W, b: attention_mean_pool(P_, W, b)), [_t(rng, T_P, D), _t(rng, D, 1), _t(rng, 1)]


def _conv(rng):
    conv = MultiScaleConv(D, (3, 5), rng)
    params = [conv.kernels[0], conv.kernels[1], conv.biases[0], conv.proj.weight]
    return (lambda x, *_: conv(x)), [_t(rng, 2, N, D), *params]


def _fuse(rng):
    mix = Linear(2 * D, D, rng)

    def f(c, pm, e, g):
        return fuse(c, repeat_align(pm, N), e, g, mix)
    return f, [_t(rng, N, D), _t(rng, 1, D), _t(rng, N, D), _t(rng, 1)]


def _block(rng):
    cfg = BackboneConfig(layers=1, heads=2, d_model=D, d_ff=16, max_seq=200)
    blk = Block(cfg, rng)
    for p in blk.parameters():
        p.data = p.data + rng.normal(0, 0.3, p.shape)  # move off the tiny init scale
    mask = causal_mask(N)
    return (lambda x, w: blk(x, mask)[0]), [_t(rng, 2, N, D), blk.w_qkv]


def _head(rng):
    head = EnhancementHead(D, P, rng)
    return (lambda h, w: head(h)), [_t(rng, 3, N, D), head.down.weight]


def _loss_forecast(rng):
    return (lambda a, b: forecasting_loss(a, b)), [_t(rng, 3, P), _t(rng, 3, P)]


def _loss_impute(rng):
    mask = (rng.random((3, P)) < 0.6).astype(float)
    mask[0, 0] = 0.0
    return (lambda x, xh: imputation_loss(x, xh, mask)), [_t(rng, 3, P), _t(rng, 3, P)]


def _loss_total(rng):
    def f(pred, pr, fr):
        return total_loss(ad.mean(ad.square(pred)), pr, fr, 0.3)
    return f, [_t(rng, 2, P), _t(rng, N, D), _t(rng, 2, N, D)]


COMPONENTS: dict[str, Callable] = {
    "attention_mean_pool": _pool,
    "multi_scale_conv": _conv,
    "fuse": _fuse,
    "backbone_block": _block,
    "enhancement_head": _head,
    "forecasting_loss": _loss_forecast,
    "imputation_loss": _loss_impute,
    "total_loss": _loss_total,
}


def gradcheck_suite(points: int = 10, seed: int = 0, h: float = 1e-5,
                    components=None) -> dict[str, float]:
    """Worst relative error per component over ``points`` random draws."""
    out = {}
    for name in components or COMPONENTS:
        worst = 0.0
        for i in range(points):
            rng = make_rng(seed, 7, i)
            f, xs = COMPONENTS[name](rng)
            worst = max(worst, gradcheck(f, xs, h=h, seed=i))
        out[name] = worst
    return out
