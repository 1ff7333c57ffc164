from molpretrain.tensor import functional
from molpretrain.tensor.gradcheck import grad_check
from molpretrain.tensor.optim import AdamState, adam_step
from molpretrain.tensor.tensor import (
    Tape,
    Tensor,
    backward,
    current_tape,
    debug_mode,
    default_dtype,
    no_grad,
    precision,
)

__all__ = [
    "AdamState",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "current_tape",
    "debug_mode",
    "default_dtype",
    "functional",
    "grad_check",
    "no_grad",
    "precision",
]
