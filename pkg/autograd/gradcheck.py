"""
Central finite-difference gradient checks for the tape.

"""

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5):
    """
    Estimate d fn / d array for every input by central differences.

    Args:
        fn (callable): Takes one Tensor per array and returns a scalar Tensor.
        arrays (sequence): Input values; left untouched.
        h (float, optional): Step size.

    Returns:
        list: One gradient array per input.

    """
    arrays = [np.array(arr, dtype=np.float64) for arr in arrays]
    grads = []
    for position, arr in enumerate(arrays):
        grad = np.zeros_like(arr)
        for index in np.ndindex(arr.shape):
            original = arr[index]
            arr[index] = original + h
            upper = fn(*[Tensor(a) for a in arrays]).item()
            arr[index] = original - h
            lower = fn(*[Tensor(a) for a in arrays]).item()
            arr[index] = original
            grad[index] = (upper - lower) / (2.0 * h)
        grads.append(grad)
    return grads


def analytic_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]):
    inputs = [Tensor(arr, requires_grad=True) for arr in arrays]
    backward(fn(*inputs))
    return [tensor.grad.copy() for tensor in inputs]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """
    Max elementwise |a - n| / max(|a|, |n|, 1).

    """
    if analytic.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5) -> float:
    """
    Compare tape gradients of `fn` against central differences.

    Returns:
        float: The worst relative error over every input element.

    """
    analytic = analytic_gradients(fn, arrays)
    numeric = numerical_gradients(fn, arrays, h=h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
