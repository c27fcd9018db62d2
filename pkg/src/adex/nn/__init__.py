"""Numerical core: tape autodiff, layers, Adam, distributions, rng streams."""

from . import dists
from .adam import AdamState, NonFiniteGradient, adam_step, clip_global_norm
from .layers import ACTIVATIONS, Layer, glorot_uniform, init_layer, mlp_forward
from .rng import RngStream
from .tensor import (
    GraphError,
    ShapeError,
    Tensor,
    backward,
    clip,
    concat,
    exp,
    expm1,
    is_tensor,
    log,
    log1mexp,
    log1p,
    logaddexp,
    logsumexp,
    no_grad,
    normal_cdf,
    permute_along_axis,
    relu,
    repeat_rows,
    reshape,
    sigmoid,
    softplus,
    sqrt,
    stack,
    astensor,
    tmean,
    toposort,
    tsum,
    where_mask,
)

__all__ = [
    "dists",
    "AdamState",
    "NonFiniteGradient",
    "adam_step",
    "clip_global_norm",
    "ACTIVATIONS",
    "Layer",
    "glorot_uniform",
    "init_layer",
    "mlp_forward",
    "RngStream",
    "GraphError",
    "ShapeError",
    "Tensor",
    "backward",
    "clip",
    "concat",
    "exp",
    "expm1",
    "is_tensor",
    "log",
    "log1mexp",
    "log1p",
    "logsumexp",
    "logaddexp",
    "no_grad",
    "normal_cdf",
    "permute_along_axis",
    "relu",
    "repeat_rows",
    "reshape",
    "sigmoid",
    "softplus",
    "sqrt",
    "stack",
    "astensor",
    "tmean",
    "toposort",
    "tsum",
    "where_mask",
]
