"""Reverse-mode autodiff on numpy arrays."""

from . import functional
from .gradcheck import gradcheck, numerical_grad, relative_error
from .nn import (
    Conv3d,
    ConvBlock,
    DoubleConv,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Norm,
    Parameter,
    TransformerLayer,
    UpConv,
)
from .optim import Adam, MissingGradientError, adam_step
from .tensor import Tensor, concat, ensure_tensor, is_grad_enabled, matmul, no_grad, stack

__all__ = [
    "Adam",
    "Conv3d",
    "ConvBlock",
    "DoubleConv",
    "LayerNorm",
    "Linear",
    "MissingGradientError",
    "Module",
    "MultiHeadAttention",
    "Norm",
    "Parameter",
    "Tensor",
    "TransformerLayer",
    "UpConv",
    "adam_step",
    "concat",
    "ensure_tensor",
    "functional",
    "gradcheck",
    "is_grad_enabled",
    "matmul",
    "no_grad",
    "numerical_grad",
    "relative_error",
    "stack",
]
