"""
Adam with bias correction, applied in place to tape parameters.

"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


class OptimizerError(ValueError):
    pass


@dataclass
class AdamState:
    """
    Moment buffers and step counter for one parameter group.

    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def _ensure_buffers(self, params: Sequence[Tensor]):
        if not self.first_moment:
            self.first_moment = [np.zeros_like(p.data) for p in params]
            self.second_moment = [np.zeros_like(p.data) for p in params]
            return
        if len(self.first_moment) != len(params) or any(
            m.shape != p.shape for m, p in zip(self.first_moment, params)
        ):
            raise OptimizerError(
                "Adam moment buffers do not match the parameters they were created for."
            )


def adam_step(params: Sequence[Tensor], state: AdamState):
    """
    Apply one Adam update to `params` and zero their gradients.

    Args:
        params (sequence): Leaf tensors with populated `.grad`.
        state (AdamState): Moments and hyperparameters, updated in place.

    Raises:
        OptimizerError: If a parameter carries no gradient buffer.

    """
    params = list(params)
    for param in params:
        if param.grad is None:
            raise OptimizerError(f"Parameter {param.name or param!r} has no gradient to apply.")
    state._ensure_buffers(params)

    state.step_count += 1
    correction1 = 1.0 - state.beta1 ** state.step_count
    correction2 = 1.0 - state.beta2 ** state.step_count
    for param, m, v in zip(params, state.first_moment, state.second_moment):
        grad = param.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)
        m_hat = m / correction1
        v_hat = v / correction2
        param.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        param.zero_grad()
