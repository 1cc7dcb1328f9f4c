"""Minimal reverse-mode autodiff over numpy arrays (NHWC layout)."""
from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .gradcheck import GradCheckResult, grad_check
from .ops import (
    add,
    conv2d,
    fully_connected,
    global_avg_pool,
    mean,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    square,
    sub,
    upsample_nearest,
)
from .ops import sum as reduce_sum
from .optim import adam_step, sgd_step
from .params import ParameterStore, he_uniform
from .tensor import NonFiniteError, ShapeError, Tensor, as_tensor, backward, grad_enabled, no_grad

__all__ = [
    "CheckpointError", "GradCheckResult", "NonFiniteError", "ParameterStore", "ShapeError",
    "Tensor", "adam_step", "add", "as_tensor", "backward", "conv2d", "fully_connected",
    "global_avg_pool", "grad_check", "grad_enabled", "he_uniform", "mean", "mul", "no_grad",
    "read_checkpoint", "reduce_sum", "relu", "reshape", "scale", "sgd_step", "sigmoid",
    "square", "sub", "upsample_nearest", "write_checkpoint",
]
