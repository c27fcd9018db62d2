"""Feed-forward layers over the autodiff core."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

__all__ = ["Layer", "mlp_forward", "init_layer", "glorot_uniform", "ACTIVATIONS"]

ACTIVATIONS = {
    "relu": T.relu,
    "softplus": T.softplus,
    "identity": lambda x: x,
}


@dataclass
class Layer:
    """One dense layer: x @ W + b followed by a tagged activation."""

    W: Tensor
    b: Tensor
    activation: str = "identity"

    @property
    def fan_in(self) -> int:
        return self.W.shape[0]

    @property
    def fan_out(self) -> int:
        return self.W.shape[1]


def mlp_forward(layers: list[Layer], x):
    """Apply dense layers in sequence.

    ``x`` is (batch, fan_in) and may be a Tensor or ndarray; the output is
    recorded on the graph whenever any input or weight is traced.
    """
    out = x
    for i, layer in enumerate(layers):
        if layer.activation not in ACTIVATIONS:
            raise ShapeError(f"layer {i}: unknown activation {layer.activation!r}")
        width = out.shape[-1] if hasattr(out, "shape") else np.shape(out)[-1]
        if width != layer.fan_in:
            raise ShapeError(
                f"layer {i}: input width {width} != expected {layer.fan_in}")
        out = T.add(T.matmul(out, layer.W), layer.b)
        out = ACTIVATIONS[layer.activation](out)
    return out


def glorot_uniform(gen, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def init_layer(gen, fan_in: int, fan_out: int, activation="identity",
               dtype=np.float32, name=None) -> Layer:
    W = Tensor(glorot_uniform(gen, fan_in, fan_out, dtype), requires_grad=True,
               name=None if name is None else f"{name}.W")
    b = Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True,
               name=None if name is None else f"{name}.b")
    return Layer(W, b, activation)
