from .layers import (
    BatchNorm1d,
    Conv1d,
    Dropout,
    Flatten,
    Linear,
    Module,
    Parameter,
    ParameterSet,
    ReLU,
    load_state_dict,
    state_dict,
)
from .optim import AdamW
from .gradcheck import GradCheckReport, grad_check
from .functional import softmax, softmax_xent

__all__ = [
    "AdamW",
    "BatchNorm1d",
    "Conv1d",
    "Dropout",
    "Flatten",
    "GradCheckReport",
    "Linear",
    "Module",
    "Parameter",
    "ParameterSet",
    "ReLU",
    "grad_check",
    "load_state_dict",
    "softmax",
    "softmax_xent",
    "state_dict",
]
