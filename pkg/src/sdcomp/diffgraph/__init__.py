"""Reverse-mode differentiation engine over dense float64 arrays."""

from .checkpoint import CHECKPOINT_VERSION, CheckpointMismatch, ParameterStore
from .geomops import euler_map_layer, exp_map_layer, se3_log_layer
from .graph import (
    Node,
    NonScalarLoss,
    ShapeMismatch,
    backward,
    constant,
    forward,
    parameter,
)
from .ops import (
    abs_,
    add,
    as_node,
    box_filter3,
    clamp,
    concat,
    conv2d,
    conv2d_transpose,
    div,
    exp,
    getitem,
    grid_sample_bilinear,
    leaky_relu,
    log,
    matmul,
    max_pool2,
    mean,
    mul,
    neg,
    reshape,
    softplus,
    spatial_mean,
    sqrt,
    square,
    ssim3,
    sub,
    sum_,
    upsample_bilinear2,
)

__all__ = [
    "CHECKPOINT_VERSION",
    "CheckpointMismatch",
    "Node",
    "NonScalarLoss",
    "ParameterStore",
    "ShapeMismatch",
    "abs_",
    "add",
    "as_node",
    "backward",
    "box_filter3",
    "clamp",
    "concat",
    "constant",
    "conv2d",
    "conv2d_transpose",
    "div",
    "euler_map_layer",
    "exp",
    "exp_map_layer",
    "forward",
    "getitem",
    "grid_sample_bilinear",
    "leaky_relu",
    "log",
    "matmul",
    "max_pool2",
    "mean",
    "mul",
    "neg",
    "parameter",
    "reshape",
    "se3_log_layer",
    "softplus",
    "spatial_mean",
    "sqrt",
    "square",
    "ssim3",
    "sub",
    "sum_",
    "upsample_bilinear2",
]
