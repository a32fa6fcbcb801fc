"""Parameterised building blocks: sine/linear dense layers, SIREN stacks, convolutions."""
from __future__ import annotations

import math

import numpy as np

from .autograd import DimensionError, Tensor, conv2d, linear, relu, sine

FIRST_OMEGA = 30.0


class Module:
    """Minimal parameter container with dotted-path naming."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class DenseLayer(Module):
    """``activation(frequency * (x W^T + b))`` with activation in {"sine", "none"}."""

    def __init__(self, in_dim, out_dim, activation="sine", frequency=1.0, init_bound=None,
                 rng=None, dtype=np.float64):
        if activation not in ("sine", "none"):
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng()
        if init_bound is None:
            init_bound = math.sqrt(6.0 / in_dim) / frequency
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.frequency = float(frequency)
        self.weight = Tensor(rng.uniform(-init_bound, init_bound, (out_dim, in_dim)).astype(dtype),
                             requires_grad=True)
        # bias follows the usual fan-in rule
        bb = 1.0 / math.sqrt(in_dim)
        self.bias = Tensor(rng.uniform(-bb, bb, out_dim).astype(dtype), requires_grad=True)

    def __call__(self, x):
        return dense_forward(self, x)


def dense_forward(layer, x):
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise DimensionError(
            f"dense layer expects [batch x {layer.in_dim}] input, got {tuple(x.shape)} "
            f"(weight {tuple(layer.weight.shape)})"
        )
    z = linear(x, layer.weight, layer.bias)
    if layer.activation == "sine":
        return sine(z, layer.frequency)
    if layer.frequency != 1.0:
        return z * layer.frequency
    return z


class Siren(Module):
    """Sine-activated hidden layers followed by a linear output layer.

    The first layer uses frequency 30 with weights in [-1/in, 1/in]; later
    hidden layers use frequency ``hidden_omega`` with weights in
    [-sqrt(6/in)/hidden_omega, sqrt(6/in)/hidden_omega]. The output layer is
    drawn from [-sqrt(6/in)/30, sqrt(6/in)/30] so initial outputs stay small.
    """

    def __init__(self, in_dim, hidden_dims, out_dim, hidden_omega=1.0, rng=None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng()
        self.layers = []
        prev = in_dim
        for k, h in enumerate(hidden_dims):
            if k == 0:
                layer = DenseLayer(prev, h, "sine", FIRST_OMEGA, init_bound=1.0 / prev, rng=rng, dtype=dtype)
            else:
                layer = DenseLayer(prev, h, "sine", hidden_omega, rng=rng, dtype=dtype)
            self.layers.append(layer)
            prev = h
        self.layers.append(DenseLayer(prev, out_dim, "none", 1.0,
                                      init_bound=math.sqrt(6.0 / prev) / FIRST_OMEGA, rng=rng, dtype=dtype))
        self.in_dim = in_dim
        self.out_dim = out_dim

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class Conv2d(Module):
    """3x3 (or any odd k) stride-1 convolution on channels-last [B, H, W, C] tensors."""

    def __init__(self, in_ch, out_ch, kernel_size=3, rng=None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng()
        bound = 1.0 / math.sqrt(in_ch * kernel_size * kernel_size)
        self.weight = Tensor(rng.uniform(-bound, bound, (kernel_size, kernel_size, in_ch, out_ch)).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, out_ch).astype(dtype), requires_grad=True)

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias)


class ResBlock(Module):
    def __init__(self, ch, kernel_size=3, rng=None, dtype=np.float64):
        self.conv1 = Conv2d(ch, ch, kernel_size, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(ch, ch, kernel_size, rng=rng, dtype=dtype)

    def __call__(self, x):
        return x + self.conv2(relu(self.conv1(x)))
