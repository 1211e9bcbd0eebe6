"""Parameterized building blocks shared by every model variant.

All convolutions are 3x3. Parameters live in a ParamStore so that model
code can enumerate, count, zero and serialize them uniformly.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, add, conv2d, conv2d_transpose, get_default_dtype, prelu, relu
from .errors import ConfigurationError

KERNEL_SIZE = 3


class ParamStore:
    """Ordered name -> Tensor registry with unique names."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ConfigurationError(f"parameter {name!r} registered twice")
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    @property
    def total_count(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = [n for n in self._params if n not in arrays]
        extra = [n for n in arrays if n not in self._params]
        if missing or extra:
            raise ConfigurationError(
                f"parameter name mismatch: missing {missing}, unexpected {extra}"
            )
        for name, t in self._params.items():
            a = np.asarray(arrays[name])
            if a.shape != t.data.shape:
                raise ConfigurationError(
                    f"parameter {name!r} has shape {t.data.shape}, loaded {a.shape}"
                )
            t.data[...] = a.astype(t.data.dtype)


def glorot_uniform_init(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> Tensor:
    if fan_in <= 0 or fan_out <= 0:
        raise ConfigurationError(f"fans must be positive, got {fan_in}, {fan_out}")
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())
    return Tensor(data, requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=get_default_dtype()), requires_grad=True)


class ConvLayer:
    """3x3 convolution with bias; glorot kernel, zero bias."""

    def __init__(self, store: ParamStore, name: str, cin: int, cout: int,
                 rng: np.random.Generator, stride: int = 1, pad: int = 1):
        k = KERNEL_SIZE
        fan_in = cin * k * k
        fan_out = cout * k * k
        self.kernel = store.register(name + ".kernel",
                                     glorot_uniform_init((cout, cin, k, k), fan_in, fan_out, rng))
        self.bias = store.register(name + ".bias", zeros_param((cout,)))
        self.stride = stride
        self.pad = pad

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernel, self.bias, stride=self.stride, pad=self.pad)


class TransposedConvLayer:
    """3x3 transposed convolution that upsamples spatially by `stride`.

    pad=1 with output_pad=stride-1 makes the output exactly stride times
    the input size.
    """

    def __init__(self, store: ParamStore, name: str, cin: int, cout: int,
                 rng: np.random.Generator, stride: int):
        if stride < 1:
            raise ConfigurationError(f"stride must be >= 1, got {stride}")
        k = KERNEL_SIZE
        fan_in = cin * k * k
        fan_out = cout * k * k
        self.kernel = store.register(name + ".kernel",
                                     glorot_uniform_init((cin, cout, k, k), fan_in, fan_out, rng))
        self.bias = store.register(name + ".bias", zeros_param((cout,)))
        self.stride = stride
        self.pad = 1
        self.output_pad = stride - 1

    def __call__(self, x: Tensor) -> Tensor:
        y = conv2d_transpose(x, self.kernel, self.bias, stride=self.stride,
                             pad=self.pad, output_pad=self.output_pad)
        assert y.shape[2] == self.stride * x.shape[2]
        assert y.shape[3] == self.stride * x.shape[3]
        return y


class ResidualBlock:
    """Shape-preserving pre-activation block: x + conv2(relu(conv1(relu(x))))."""

    def __init__(self, store: ParamStore, name: str, width: int, rng: np.random.Generator):
        self.conv1 = ConvLayer(store, name + ".conv1", width, width, rng)
        self.conv2 = ConvLayer(store, name + ".conv2", width, width, rng)

    def body(self, x: Tensor) -> Tensor:
        return self.conv2(relu(self.conv1(relu(x))))

    def __call__(self, x: Tensor) -> Tensor:
        return add(x, self.body(x))


PRELU_INIT_SLOPE = 0.25


def make_prelu_slope(store: ParamStore, name: str) -> Tensor:
    return store.register(name, Tensor(np.asarray(PRELU_INIT_SLOPE, dtype=get_default_dtype()),
                                       requires_grad=True))


def prelu_state_activation(x: Tensor, slope_param: Tensor) -> Tensor:
    """Elementwise PReLU with one learnable scalar slope."""
    return prelu(x, slope_param)
