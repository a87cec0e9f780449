"""Tensor arithmetic, reverse-mode differentiation and attention blocks."""

from .checkpoint import VERSION, FormatError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .nn import (AttentionParams, ConfigError, DropoutSpec, LayerNormParams, Linear, dropout,
                 l2_normalize, layer_norm, multi_head_attention, prelu, scaled_softmax, xavier_uniform)
from .tensor import (NumericError, ShapeError, Tensor, add, as_tensor, backward, broadcast_to, clip,
                     concat, log, matmul, mul, reshape, square, sub, swapaxes, take, tmean, tsum)

__all__ = [
    "AttentionParams", "ConfigError", "DropoutSpec", "FormatError", "LayerNormParams", "Linear",
    "NumericError", "ShapeError", "Tensor", "add", "as_tensor", "backward", "broadcast_to", "clip",
    "concat", "dropout", "grad_check", "l2_normalize", "layer_norm", "load_checkpoint", "log",
    "matmul", "mul", "multi_head_attention", "prelu", "reshape", "save_checkpoint", "scaled_softmax",
    "square", "sub", "swapaxes", "take", "tmean", "tsum", "xavier_uniform",
]
