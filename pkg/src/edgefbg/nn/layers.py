"""Network building blocks on top of the autodiff Tensor.

Modules own parameters (Tensors with requires_grad=True) and optional
buffers (plain arrays such as running batch-norm statistics). Weight
initialization is Xavier uniform and draws from a Generator passed in at
construction time, so a model built twice from the same seed is
bit-identical.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def xavier_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int,
                   dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Module:
    """Base class: parameter registry, train/eval mode, state dicts."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}
        self.training = True

    def __setattr__(self, key, value):
        if isinstance(value, Module):
            self.__dict__.setdefault("_children", {})[key] = value
        super().__setattr__(key, value)

    def register_parameter(self, name: str, value: np.ndarray) -> Tensor:
        p = Tensor(value, requires_grad=True, name=name)
        self._params[name] = p
        return p

    def register_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._buffers[name] = value
        return value

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield (prefix + name, b)
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self):
        self.training = True
        for child in self._children.values():
            child.train()
        return self

    def eval(self):
        self.training = False
        for child in self._children.values():
            child.eval()
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        for name, b in self.named_buffers():
            state[name] = b
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = {name: p for name, p in self.named_parameters()}
        buffers = dict(self.named_buffers())
        missing = (set(own) | set(buffers)) - set(state)
        extra = set(state) - (set(own) | set(buffers))
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=p.data.dtype)
            if value.shape != p.data.shape:
                raise ValueError(
                    f"{name}: shape {value.shape} does not match {p.data.shape}"
                )
            p.data = value.copy()
        for name, buf in buffers.items():
            value = np.asarray(state[name], dtype=buf.dtype)
            if value.shape != buf.shape:
                raise ValueError(
                    f"{name}: shape {value.shape} does not match {buf.shape}"
                )
            buf[...] = value

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Dense(Module):
    """Affine map on (B, F_in) -> (B, F_out)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self.register_parameter(
            "weight",
            xavier_uniform(rng, (in_features, out_features), in_features, out_features, dtype),
        )
        self.bias = self.register_parameter(
            "bias", np.zeros(out_features, dtype=dtype)
        )

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class Conv1d(Module):
    """Stride-1 same-padding 1-D convolution on (B, C, L)."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        fan_in = in_channels * kernel_size
        fan_out = out_channels * kernel_size
        self.weight = self.register_parameter(
            "weight",
            xavier_uniform(rng, (out_channels, in_channels, kernel_size),
                           fan_in, fan_out, dtype),
        )
        self.bias = self.register_parameter(
            "bias", np.zeros(out_channels, dtype=dtype)
        )

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias)


class BatchNorm1d(Module):
    """Batch normalization over (B, F) or per channel over (B, C, L).

    Training mode normalizes with the population statistics of the current
    batch (which must hold at least two samples) and updates exponential
    running averages; eval mode applies the stored averages.
    """

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float32):
        super().__init__()
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.gamma = self.register_parameter("gamma", np.ones(num_features, dtype=dtype))
        self.beta = self.register_parameter("beta", np.zeros(num_features, dtype=dtype))
        self.running_mean = self.register_buffer(
            "running_mean", np.zeros(num_features, dtype=dtype)
        )
        self.running_var = self.register_buffer(
            "running_var", np.ones(num_features, dtype=dtype)
        )

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim == 2:
            axes = (0,)
            feature_axis = 1
        elif x.data.ndim == 3:
            axes = (0, 2)
            feature_axis = 1
        else:
            raise ValueError(f"batch norm expects 2-D or 3-D input, got {x.data.shape}")
        if x.data.shape[feature_axis] != self.num_features:
            raise ValueError(
                f"expected {self.num_features} features, got {x.data.shape[feature_axis]}"
            )
        if self.training:
            if x.data.shape[0] < 2:
                raise ValueError("batch norm in training mode needs a batch of >= 2")
            mean = x.data.mean(axis=axes)
            var = x.data.var(axis=axes)
            m = self.momentum
            self.running_mean *= 1.0 - m
            self.running_mean += m * mean.astype(self.running_mean.dtype)
            self.running_var *= 1.0 - m
            self.running_var += m * var.astype(self.running_var.dtype)
            return T.batchnorm(x, self.gamma, self.beta, mean, var, self.eps, axes)
        return T.batchnorm_inference(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps, axes
        )


class MaxPool1d(Module):
    """Ceil-mode max pooling; a trailing partial window is kept."""

    def __init__(self, size: int):
        super().__init__()
        self.size = size

    def forward(self, x: Tensor) -> Tensor:
        return T.maxpool1d(x, self.size)


class Dropout(Module):
    """Inverted dropout; identity in eval mode. Forward takes the rng."""

    def __init__(self, p: float):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        if not self.training or self.p == 0.0:
            return x
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        return T.dropout(x, self.p, rng)
