from .layers import (
    Param,
    Dense,
    Conv2d,
    ConvTranspose2d,
    BatchNorm2d,
    LeakyReLU,
    ReLU,
    Tanh,
    Flatten,
    Reshape,
    im2col,
    col2im,
    sigmoid,
    softmax,
    log_softmax,
)
from .net import Stack, zero_grads, unique_params, named_value_checksum
from .optim import SgdOptimizer, AdamOptimizer, make_optimizer
from .io import save_tensors, load_tensors

__all__ = [
    "Param",
    "Dense",
    "Conv2d",
    "ConvTranspose2d",
    "BatchNorm2d",
    "LeakyReLU",
    "ReLU",
    "Tanh",
    "Flatten",
    "Reshape",
    "im2col",
    "col2im",
    "sigmoid",
    "softmax",
    "log_softmax",
    "Stack",
    "zero_grads",
    "unique_params",
    "named_value_checksum",
    "SgdOptimizer",
    "AdamOptimizer",
    "make_optimizer",
    "save_tensors",
    "load_tensors",
]
