"""Minimal module system: parameter registration, train/eval mode, state dicts."""
from __future__ import annotations

import math
from collections import OrderedDict
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from . import functional as F
from .tensor import DEFAULT_DTYPE, Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str = ""):
        super().__init__(np.asarray(data, dtype=DEFAULT_DTYPE), requires_grad=True, name=name)


class Module:
    """Base class. Parameters, buffers and child modules are discovered from attributes."""

    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, item in enumerate(value):
                    yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in self._children():
            if isinstance(value, Parameter):
                yield prefix + name, value
            else:
                yield from value.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, buf in getattr(self, "_buffers", {}).items():
            yield prefix + name, buf
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((n, p.data) for n, p in self.named_parameters())
        state.update((n, b) for n, b in self.named_buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch; missing={sorted(missing)} unexpected={sorted(unexpected)}")
        params = dict(self.named_parameters())
        for name, value in state.items():
            target = own[name]
            if tuple(np.shape(value)) != target.shape:
                raise ValueError(f"{name}: shape {np.shape(value)} != {target.shape}")
            if name in params:
                params[name].data = np.array(value, dtype=target.dtype)
            else:
                target[...] = value

    def to(self, dtype) -> "Module":
        """Cast all parameters and buffers (e.g. to float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            bufs = getattr(m, "_buffers", None)
            if bufs:
                for k in bufs:
                    bufs[k] = bufs[k].astype(dtype)
        return self


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return np.clip(rng.normal(0.0, std, size=shape), -2 * std, 2 * std)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding="same", bias: bool = True, depthwise: bool = False):
        if depthwise and in_ch != out_ch:
            raise ValueError("depthwise convolution needs in_ch == out_ch")
        self.stride, self.padding, self.depthwise = stride, padding, depthwise
        if depthwise:
            shape, fan_in = (out_ch, 1, kernel, kernel), kernel * kernel
        else:
            shape, fan_in = (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel
        self.weight = Parameter(he_normal(rng, shape, fan_in))
        self.bias = Parameter(np.zeros(out_ch)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        op = F.depthwise_conv2d if self.depthwise else F.conv2d
        return op(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True,
                 init: str = "trunc_normal"):
        if init == "he":
            w = he_normal(rng, (out_dim, in_dim), in_dim)
        else:
            w = trunc_normal(rng, (out_dim, in_dim))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    """Batch norm over axis 1; works for ``[B,C]`` and ``[B,C,H,W]``."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.momentum, self.eps = momentum, eps
        self._buffers = {
            "running_mean": np.zeros(channels, dtype=DEFAULT_DTYPE),
            "running_var": np.ones(channels, dtype=DEFAULT_DTYPE),
        }

    def forward(self, x: Tensor) -> Tensor:
        return F.batchnorm(x, self.weight, self.bias, self._buffers["running_mean"],
                           self._buffers["running_var"], self.training, self.momentum, self.eps)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layernorm(x, self.weight, self.bias, self.eps)


class Dropout(Module):
    def __init__(self, rate: float, rng: Optional[np.random.Generator] = None):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return F.dropout(x, self.rate, self.training, self.rng)
