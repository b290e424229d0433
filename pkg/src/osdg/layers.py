"""Thin parameterized wrappers over the autodiff primitives.

Each layer owns its weight tensors and exposes ``params()``; initialization
is seeded through the generator handed in by the model builder so identical
seeds give identical networks.
"""

from __future__ import annotations

from typing import List

import numpy as np

from . import numerics as nx


def _init_weight(rng: np.random.Generator, shape, fan_in: int, gain: float, dtype) -> np.ndarray:
    std = gain / np.sqrt(max(fan_in, 1))
    return rng.normal(0.0, std, size=shape).astype(dtype)


class Linear:
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, gain: float = np.sqrt(2.0), zero_init: bool = False, dtype=np.float32):
        if zero_init:
            w = np.zeros((fan_in, fan_out), dtype=dtype)
        else:
            w = _init_weight(rng, (fan_in, fan_out), fan_in, gain, dtype)
        self.w = nx.Tensor(w, requires_grad=True, dtype=dtype)
        self.b = nx.Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True, dtype=dtype)

    def __call__(self, x) -> nx.Tensor:
        return nx.add(nx.matmul(x, self.w), self.b)

    def params(self) -> List[nx.Tensor]:
        return [self.w, self.b]


class Conv1d:
    """Valid 1D convolution layer with bias, optionally strided."""

    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator, stride: int = 1, dtype=np.float32):
        fan_in = cin * kernel
        self.w = nx.Tensor(_init_weight(rng, (cout, cin, kernel), fan_in, np.sqrt(2.0), dtype), requires_grad=True, dtype=dtype)
        self.b = nx.Tensor(np.zeros(cout, dtype=dtype), requires_grad=True, dtype=dtype)
        self.stride = stride

    def __call__(self, x) -> nx.Tensor:
        y = nx.conv1d(x, self.w, stride=self.stride)
        return nx.add(y, nx.reshape(self.b, (1, -1, 1)))

    def params(self) -> List[nx.Tensor]:
        return [self.w, self.b]


class Conv2d:
    """Stride-1 2D convolution layer with bias and symmetric zero padding."""

    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator, pad: int = 0, dtype=np.float32):
        fan_in = cin * kernel * kernel
        self.w = nx.Tensor(_init_weight(rng, (cout, cin, kernel, kernel), fan_in, np.sqrt(2.0), dtype), requires_grad=True, dtype=dtype)
        self.b = nx.Tensor(np.zeros(cout, dtype=dtype), requires_grad=True, dtype=dtype)
        self.pad = pad

    def __call__(self, x) -> nx.Tensor:
        y = nx.conv2d(x, self.w, pad=self.pad)
        return nx.add(y, nx.reshape(self.b, (1, -1, 1, 1)))

    def params(self) -> List[nx.Tensor]:
        return [self.w, self.b]
