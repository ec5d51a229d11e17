from objtx.core.numerics.functional import (
    concat,
    dropout,
    gelu,
    layer_norm,
    linear,
    log_softmax,
    matmul,
    softmax,
    softplus,
    stack,
)
from objtx.core.numerics.optim import AdamState, adam_step, lr_schedule, update_lr
from objtx.core.numerics.registry import ParamRegistry
from objtx.core.numerics.tensor import Graph, Tensor, backward, default_dtype, precision

__all__ = [
    "AdamState",
    "Graph",
    "ParamRegistry",
    "Tensor",
    "adam_step",
    "backward",
    "concat",
    "default_dtype",
    "dropout",
    "gelu",
    "layer_norm",
    "linear",
    "log_softmax",
    "lr_schedule",
    "matmul",
    "precision",
    "softmax",
    "softplus",
    "stack",
    "update_lr",
]
