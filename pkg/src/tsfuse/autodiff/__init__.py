from .tensor import (
    ShapeError, Tensor, absolute, add, as_tensor, backward, broadcast_to, concat,
    conv1d, div, embedding, exp, gelu, getitem, layer_norm, matmul, mean, mul,
    relu, reshape, scale, sigmoid, softmax, sqrt, square, sub, swapaxes, transpose,
    tsum,
)
from .nn import LayerNorm, Linear, Module, Parameter, make_rng
from .optim import Adam, NonFiniteGradientError, optimizer_step
from .gradcheck import gradcheck

__all__ = [
    "ShapeError", "Tensor", "absolute", "add", "as_tensor", "backward", "broadcast_to",
    "concat", "conv1d", "div", "embedding", "exp", "gelu", "getitem", "layer_norm",
    "matmul", "mean", "mul", "relu", "reshape", "scale", "sigmoid", "softmax", "sqrt",
    "square", "sub", "swapaxes", "transpose", "tsum", "LayerNorm", "Linear", "Module",
    "Parameter", "make_rng", "Adam", "NonFiniteGradientError", "optimizer_step",
    "gradcheck",
]
