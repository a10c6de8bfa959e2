from .tensor import (
    PRIMITIVES,
    ShapeError,
    Tape,
    Tensor,
    apply_primitive,
    backward,
    inject_gradient_fault,
)
from . import tensor as ops
from .module import LayerNorm, Linear, Module
from .optim import AdamState, adam_step, cosine_anneal_lr
from .gradcheck import check_parameters, grad_check, relative_error

dropout = ops.dropout

__all__ = [
    "PRIMITIVES",
    "ShapeError",
    "Tape",
    "Tensor",
    "apply_primitive",
    "backward",
    "inject_gradient_fault",
    "ops",
    "LayerNorm",
    "Linear",
    "Module",
    "AdamState",
    "adam_step",
    "cosine_anneal_lr",
    "check_parameters",
    "grad_check",
    "relative_error",
    "dropout",
]
