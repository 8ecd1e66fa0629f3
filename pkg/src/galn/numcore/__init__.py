from .autodiff import (
    PRIMITIVES,
    ShapeError,
    Tape,
    Tensor,
    active_tape,
    add,
    backward,
    concat,
    forward_op,
    gather_mean,
    gather_rows,
    l1_distance,
    matmul,
    mean_rows,
    relu,
    row_norm,
    scale,
    softmax_cross_entropy,
    squared_distance,
    sub,
    total,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .optim import OptimState, sgd_step, step_lr

__all__ = [
    "PRIMITIVES", "ShapeError", "Tape", "Tensor", "active_tape", "add", "backward",
    "concat", "forward_op", "gather_mean", "gather_rows", "l1_distance", "matmul",
    "mean_rows", "relu", "row_norm", "scale", "softmax_cross_entropy",
    "squared_distance", "sub", "total", "CheckpointError", "load_checkpoint",
    "save_checkpoint", "OptimState", "sgd_step", "step_lr",
]
