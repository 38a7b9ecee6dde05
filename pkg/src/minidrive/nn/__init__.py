"""Minimal reverse-mode autodiff on float32 numpy arrays, the branched
waypoint-heatmap network, and the Adam optimizer."""

from minidrive.nn.tensor import (
    GraphNotBuilt,
    ShapeMismatch,
    Tensor,
    abs_,
    add,
    camera_pixels_to_ground,
    concat,
    conv2d,
    conv_transpose2d,
    l1_loss,
    leaky_relu,
    mean,
    mul,
    reshape,
    select_branch,
    set_debug_checks,
    sigmoid,
    soft_argmax2d,
    sub,
    sum_,
)
from minidrive.nn.net import NetConfig, PerceptionNet, WaypointNet
from minidrive.nn.optim import AdamState, adam_step
from minidrive.nn.checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "AdamState",
    "GraphNotBuilt",
    "NetConfig",
    "PerceptionNet",
    "ShapeMismatch",
    "Tensor",
    "WaypointNet",
    "abs_",
    "adam_step",
    "add",
    "camera_pixels_to_ground",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "l1_loss",
    "leaky_relu",
    "load_checkpoint",
    "mean",
    "mul",
    "reshape",
    "save_checkpoint",
    "select_branch",
    "set_debug_checks",
    "sigmoid",
    "soft_argmax2d",
    "sub",
    "sum_",
]
