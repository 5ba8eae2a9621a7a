"""Minimal float64 tensor math with reverse-mode differentiation."""
from .functional import conv2d, gelu, layer_norm, linear, log_softmax, mlp, softmax, straight_through
from .gradcheck import finite_diff_check
from .rng import Rng
from .tensor import (MacCounter, Tensor, as_tensor, concat, count_macs, mac_tag, matmul, maximum,
                     minimum, no_grad, pad2d, stack, where)

__all__ = [
    "MacCounter", "Rng", "Tensor", "as_tensor", "concat", "conv2d", "count_macs", "finite_diff_check",
    "gelu", "layer_norm", "linear", "log_softmax", "mac_tag", "matmul", "maximum", "minimum", "mlp",
    "no_grad", "pad2d", "softmax", "stack", "straight_through", "where",
]
