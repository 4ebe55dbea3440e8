"""
Reverse-mode automatic differentiation over numpy arrays.

"""

from .optim import AdamState, OptimizerError, adam_step
from .tensor import (
    DomainError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    TensorError,
    backward,
    concat,
    no_grad,
    stop_gradient,
)
