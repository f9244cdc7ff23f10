"""Named parameter bundles and their functional application.

A :class:`LayerParams` couples a weight tensor (and optional bias) with the
stable name used for optimizer bookkeeping and checkpoint serialization.
Conv-style weights are ``(out_channels, in_channels, kernel)``; linear
weights are ``(out_features, in_features)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor

__all__ = [
    "LayerParams",
    "conv1d",
    "tconv1d",
    "linear",
    "init_conv",
    "init_linear",
]


@dataclass
class LayerParams:
    """A named weight/bias pair; names must be unique within a model."""

    name: str
    weight: Tensor
    bias: Tensor | None = None

    def tensors(self) -> list[Tensor]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [(f"{self.name}.weight", self.weight)]
        if self.bias is not None:
            out.append((f"{self.name}.bias", self.bias))
        return out


def conv1d(x: Tensor, params: LayerParams, padding: int = 0) -> Tensor:
    return ops.conv1d(x, params.weight, params.bias, padding=padding)


def tconv1d(x: Tensor, params: LayerParams) -> Tensor:
    return ops.tconv1d(x, params.weight, params.bias)


def linear(x: Tensor, params: LayerParams) -> Tensor:
    return ops.linear(x, params.weight, params.bias)


def _uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, dtype):
    bound = float(np.sqrt(1.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_conv(name: str, out_channels: int, in_channels: int, kernel: int,
              rng: np.random.Generator, dtype=np.float32,
              bias: bool = True) -> LayerParams:
    """Conv weights drawn uniform in +-sqrt(1/fan_in), zero bias."""
    weight = Tensor(
        _uniform_fan_in(rng, (out_channels, in_channels, kernel),
                        in_channels * kernel, dtype),
        requires_grad=True,
    )
    b = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) if bias else None
    return LayerParams(name, weight, b)


def init_linear(name: str, out_features: int, in_features: int,
                rng: np.random.Generator, dtype=np.float32,
                bias: bool = True) -> LayerParams:
    """Linear weights drawn uniform in +-sqrt(1/fan_in), zero bias."""
    weight = Tensor(
        _uniform_fan_in(rng, (out_features, in_features), in_features, dtype),
        requires_grad=True,
    )
    b = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True) if bias else None
    return LayerParams(name, weight, b)
