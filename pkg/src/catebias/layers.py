"""Dense layer stacks: initialization, forward pass, parameter access."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor

ACTIVATIONS = ("elu", "sigmoid", "identity")


class ShapeError(ValueError):
    """Input width does not match a layer's expected input dimension."""


@dataclass
class DenseLayer:
    """One affine layer X @ W + b followed by an activation.

    The output layer of a stack is "identity" for continuous outcomes and
    "sigmoid" for binary ones; hidden layers use "elu".
    """

    W: Tensor
    b: Tensor
    activation: str = "elu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.data.ndim != 2:
            raise ValueError("layer weights must be a matrix")
        if self.b.data.shape != (self.W.data.shape[1],):
            raise ValueError(
                f"bias shape {self.b.data.shape} does not match out_dim {self.W.data.shape[1]}"
            )

    @property
    def in_dim(self) -> int:
        return self.W.data.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W.data.shape[1]


Stack = Sequence[DenseLayer]


def init_dense(rng: np.random.Generator, in_dim: int, out_dim: int,
               activation: str = "elu") -> DenseLayer:
    """Uniform [-sqrt(6/(fan_in+fan_out)), +...] weights, zero biases."""
    fan = max(in_dim + out_dim, 1)
    limit = np.sqrt(6.0 / fan)
    weights = rng.uniform(-limit, limit, size=(in_dim, out_dim))
    return DenseLayer(
        W=Tensor(weights, requires_grad=True),
        b=Tensor(np.zeros(out_dim), requires_grad=True),
        activation=activation,
    )


def build_stack(rng: np.random.Generator, dims: Sequence[int],
                output_activation: str = "identity") -> list[DenseLayer]:
    """Stack of dense ELU layers with the given widths, last layer linked as asked.

    dims = [in, h1, ..., out]; produces len(dims) - 1 layers.
    """
    layers = []
    for i in range(len(dims) - 1):
        act = output_activation if i == len(dims) - 2 else "elu"
        layers.append(init_dense(rng, dims[i], dims[i + 1], act))
    return layers


def copy_stack(layers: Stack) -> list[DenseLayer]:
    """Independent parameter tensors with identical values (for shared inits)."""
    return [
        DenseLayer(
            W=Tensor(layer.W.data.copy(), requires_grad=True),
            b=Tensor(layer.b.data.copy(), requires_grad=True),
            activation=layer.activation,
        )
        for layer in layers
    ]


def apply_layer(layer: DenseLayer, x: Tensor, index: int = 0) -> Tensor:
    if x.data.ndim != 2 or x.data.shape[1] != layer.in_dim:
        raise ShapeError(
            f"layer {index}: expected input width {layer.in_dim}, "
            f"got {x.data.shape}"
        )
    z = x @ layer.W + layer.b
    if layer.activation == "elu":
        return z.elu()
    if layer.activation == "sigmoid":
        return z.sigmoid()
    return z


def forward(layers: Stack, X) -> Tensor:
    """Run a matrix through a stack; rows in, rows out."""
    x = X if isinstance(X, Tensor) else Tensor(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    for i, layer in enumerate(layers):
        x = apply_layer(layer, x, index=i)
    return x


def stack_params(layers: Stack) -> list[Tensor]:
    params = []
    for layer in layers:
        params.append(layer.W)
        params.append(layer.b)
    return params


def stack_weights(layers: Stack) -> list[Tensor]:
    return [layer.W for layer in layers]
