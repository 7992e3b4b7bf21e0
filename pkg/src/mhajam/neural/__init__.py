"""Minimal dense-tensor autodiff, parameters, Adam and gradient checking."""

from . import tensor as ops
from .gradcheck import GradCheckResult, grad_check, relative_error
from .optim import AdamState, adam_step
from .params import ParamStore, load_arrays, save_arrays
from .tensor import Tape, Tensor

__all__ = [
    "AdamState",
    "GradCheckResult",
    "ParamStore",
    "Tape",
    "Tensor",
    "adam_step",
    "grad_check",
    "load_arrays",
    "ops",
    "relative_error",
    "save_arrays",
]
