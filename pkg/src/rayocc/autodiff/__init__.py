from . import ops
from .gradcheck import gradcheck, gradcheck_report
from .optim import Adam, AdamState, adam_step
from .serialize import CheckpointError, load_tensors, save_tensors
from .tensor import (
    NonFiniteError,
    Tape,
    Tensor,
    TensorError,
    backward,
    current_tape,
    default_dtype,
    no_grad,
    precision,
    set_precision,
)

__all__ = [
    "Adam", "AdamState", "CheckpointError", "NonFiniteError", "Tape", "Tensor", "TensorError",
    "adam_step", "backward", "current_tape", "default_dtype", "gradcheck", "gradcheck_report", "load_tensors",
    "no_grad", "ops", "precision", "save_tensors", "set_precision",
]
