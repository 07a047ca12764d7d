"""From-scratch autodiff engine and neural network layers."""

from .layers import (
    BatchNorm1d,
    Conv1d,
    Dense,
    Dropout,
    MaxPool1d,
    Module,
    xavier_uniform,
)
from .tensor import (
    Tensor,
    batchnorm,
    batchnorm_inference,
    conv1d,
    dropout,
    euclid_dist,
    maxpool1d,
    no_grad,
)

__all__ = [
    "BatchNorm1d",
    "Conv1d",
    "Dense",
    "Dropout",
    "MaxPool1d",
    "Module",
    "Tensor",
    "batchnorm",
    "batchnorm_inference",
    "conv1d",
    "dropout",
    "euclid_dist",
    "maxpool1d",
    "no_grad",
    "xavier_uniform",
]
