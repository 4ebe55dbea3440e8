"""
Affine layers and relu stacks built from tape tensors.

"""

import numpy as np

from autograd.tensor import Tensor


class Affine:
    """
    `x @ weight + bias` over the last axis of `x`. Leading axes are batch (and
    pixel) axes, so one layer is shared by every pixel.

    """

    __slots__ = ("name", "weight", "bias")

    def __init__(self, name: str, weight: Tensor, bias: Tensor):
        self.name = name
        self.weight = weight
        self.bias = bias

    @classmethod
    def initialize(cls, name: str, fan_in: int, fan_out: int, rng: np.random.Generator, zero: bool = False):
        """
        He-uniform weights (variance 2 / fan_in), zero bias.

        Args:
            name (str): Prefix of the parameter names.
            fan_in (int): Input width.
            fan_out (int): Output width.
            rng (Generator): Source of the weight draw.
            zero (bool, optional): Start the weights at zero instead.

        """
        if zero:
            weight = np.zeros((fan_in, fan_out))
        else:
            limit = np.sqrt(6.0 / fan_in)
            weight = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        return cls(
            name,
            Tensor(weight, requires_grad=True, name=f"{name}.weight"),
            Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.bias"),
        )

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def parameters(self) -> dict:
        return {self.weight.name: self.weight, self.bias.name: self.bias}


class MLP:
    """
    A stack of affine+relu layers.

    """

    __slots__ = ("layers",)

    def __init__(self, layers: list[Affine]):
        self.layers = layers

    @classmethod
    def initialize(cls, name: str, widths: list[int], rng: np.random.Generator):
        return cls([
            Affine.initialize(f"{name}.{index}", fan_in, fan_out, rng)
            for index, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:]))
        ])

    @property
    def out_dim(self) -> int:
        return self.layers[-1].fan_out

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x).relu()
        return x

    def parameters(self) -> dict:
        params = {}
        for layer in self.layers:
            params.update(layer.parameters())
        return params
