"""
Dense float64 tensors with a define-by-run gradient tape.

Every forward op computes its value with numpy/scipy and, when any input
requires a gradient, records a `TapeRecord` holding its inputs and a backward
rule. Calling `backward(loss)` collects the records reachable from the loss
into a `Tape`, replays them in reverse order and accumulates gradients into
the `.grad` buffers.

A record can only be replayed once. Running backward twice over the same
graph without a new forward pass raises `TapeError`.

Values are checked after every op: NaN or Inf anywhere is an error, never a
silent state.

"""

import itertools
import threading
import weakref
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

_SEQUENCE = itertools.count()
_STATE = threading.local()


class TensorError(ValueError):
    pass


class ShapeError(TensorError):
    pass


class DomainError(TensorError):
    pass


class TapeError(RuntimeError):
    pass


def _recording():
    return getattr(_STATE, "recording", True)


@contextmanager
def no_grad():
    """
    Run forward ops without recording them on the tape.

    """
    previous = _recording()
    _STATE.recording = False
    try:
        yield
    finally:
        _STATE.recording = previous


class TapeRecord:
    """
    One recorded operation: its inputs, a weak link to its output and the rule
    mapping the output gradient to input gradients.

    """

    __slots__ = ("op", "inputs", "output", "backward", "seq", "consumed")

    def __init__(self, op: str, inputs: tuple, output: "Tensor", backward: Callable):
        self.op = op
        self.inputs = inputs
        self.output = weakref.ref(output)
        self.backward = backward
        self.seq = next(_SEQUENCE)
        self.consumed = False

    def __repr__(self):
        return f"<TapeRecord {self.op} #{self.seq}>"


class Tape:
    """
    The ordered list of operations a scalar loss depends on. Records are sorted
    by creation order, which is a topological order of the graph.

    """

    __slots__ = ("records",)

    def __init__(self, records: list[TapeRecord]):
        self.records = records

    @classmethod
    def collect(cls, root: "Tensor") -> "Tape":
        if root._record is None:
            raise TapeError("backward needs a loss produced by recorded ops (is the tape empty?)")
        seen = {}
        stack = [root._record]
        while stack:
            record = stack.pop()
            if id(record) in seen:
                continue
            seen[id(record)] = record
            for tensor in record.inputs:
                if tensor._record is not None:
                    stack.append(tensor._record)
        return cls(sorted(seen.values(), key=lambda rec: rec.seq))

    def __len__(self):
        return len(self.records)

    def replay(self, root: "Tensor"):
        """
        Propagate d(root)/d(root) = 1 backward through every record.

        Raises:
            TapeError: If any record was already replayed by an earlier backward.

        """
        dead = [rec for rec in self.records if rec.consumed]
        if dead:
            raise TapeError(
                f"backward already ran through {dead[0].op} (#{dead[0].seq}); "
                "run a new forward pass first"
            )

        upstream = {id(root._record): np.ones_like(root.data)}
        for record in reversed(self.records):
            record.consumed = True
            grad = upstream.pop(id(record), None)
            rule, record.backward = record.backward, None
            if grad is None:
                continue
            output = record.output()
            if output is not None and output.grad is not None:
                output.grad += grad
            for tensor, input_grad in zip(record.inputs, rule(grad)):
                if input_grad is None or not tensor.requires_grad:
                    continue
                if tensor._record is None:
                    tensor.grad += input_grad
                else:
                    key = id(tensor._record)
                    if key in upstream:
                        upstream[key] = upstream[key] + input_grad
                    else:
                        upstream[key] = input_grad


class Tensor:
    """
    A dense n-dimensional float64 array that can take part in the gradient tape.

    Args:
        data (array-like): Values, copied and converted to float64.
        requires_grad (bool, optional): Allocate a gradient buffer and record
            ops using this tensor.
        name (str, optional): Label used in error messages and checkpoints.

    Raises:
        DomainError: If data holds NaN or Inf.

    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_record", "__weakref__")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        if not np.isfinite(self.data).all():
            label = f" {name}" if name else ""
            raise DomainError(f"tensor{label} holds non-finite values")
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self._record = None

    # properties

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._record is None

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad})"

    def __len__(self):
        return self.shape[0]

    # operator sugar

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return take_slice(self, index)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def log_sigmoid(self):
        return log_sigmoid(self)

    def softmax(self):
        return softmax(self)

    def log_softmax(self):
        return log_softmax(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def broadcast_to(self, shape):
        return broadcast_to(self, shape)

    def stop_gradient(self):
        return stop_gradient(self)


def as_tensor(value) -> Tensor:
    """
    Wrap constants (scalars, arrays) as non-recording tensors.

    """
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _emit(op: str, inputs: Sequence[Tensor], value: np.ndarray, rule: Callable) -> Tensor:
    """
    Wrap a forward result, check it and record the op when needed.

    """
    value = np.asarray(value, dtype=np.float64)
    if not np.isfinite(value).all():
        shapes = ", ".join(str(t.shape) for t in inputs)
        raise DomainError(f"{op}: produced non-finite values from inputs of shape {shapes}")
    out = Tensor.__new__(Tensor)
    out.data = value
    out.name = None
    out._record = None
    out.requires_grad = _recording() and any(t.requires_grad for t in inputs)
    out.grad = np.zeros_like(value) if out.requires_grad else None
    if out.requires_grad:
        out._record = TapeRecord(op, tuple(inputs), out, rule)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """
    Sum gradient over the axes broadcasting expanded, back to `shape`.

    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# binary elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _emit(
        "add", (a, b), a.data + b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _emit(
        "sub", (a, b), a.data - b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _emit(
        "mul", (a, b), a.data * b.data,
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if (b.data == 0).any():
        raise DomainError(f"div: division by zero (divisor shape {b.shape})")
    value = a.data / b.data
    return _emit(
        "div", (a, b), value,
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * value / b.data, b.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    """
    Matrix product of `a` (..., K) with a 2-d `b` (K, N). Leading axes of `a`
    are batch axes, which is how per-pixel layers are applied.

    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions do not agree for {a.shape} @ {b.shape}")

    def rule(g):
        grad_a = g @ b.data.T
        grad_b = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return grad_a, grad_b

    return _emit("matmul", (a, b), a.data @ b.data, rule)


# unary elementwise


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", (a,), -a.data, lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        value = np.exp(a.data)
    return _emit("exp", (a,), value, lambda g: (g * value,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if (a.data <= 0).any():
        raise DomainError(f"log: non-positive input (shape {a.shape})")
    return _emit("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def power(a, exponent: float) -> Tensor:
    """
    Elementwise `a ** exponent` for a constant exponent. Non-integer exponents
    need a non-negative base.

    """
    a = as_tensor(a)
    exponent = float(exponent)
    if not exponent.is_integer() and (a.data < 0).any():
        raise DomainError(f"pow: negative base with non-integer exponent {exponent}")
    value = np.power(a.data, exponent)

    def rule(g):
        if exponent == 0.0:
            return (np.zeros_like(g),)
        with np.errstate(divide="ignore", invalid="ignore"):
            local = exponent * np.power(a.data, exponent - 1.0)
        return (g * np.where(np.isfinite(local), local, 0.0),)

    return _emit("pow", (a,), value, rule)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _emit("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    value = special.expit(a.data)
    return _emit("sigmoid", (a,), value, lambda g: (g * value * (1.0 - value),))


def log_sigmoid(a) -> Tensor:
    """
    log(sigmoid(a)) = -softplus(-a), stable for large |a|.

    """
    a = as_tensor(a)
    return _emit(
        "log_sigmoid", (a,), special.log_expit(a.data),
        lambda g: (g * special.expit(-a.data),),
    )


def softmax(a) -> Tensor:
    a = as_tensor(a)
    value = special.softmax(a.data, axis=-1)

    def rule(g):
        return (value * (g - (g * value).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", (a,), value, rule)


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    value = special.log_softmax(a.data, axis=-1)

    def rule(g):
        return (g - np.exp(value) * g.sum(axis=-1, keepdims=True),)

    return _emit("log_softmax", (a,), value, rule)


# reductions and shape ops


def _normalize_axes(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(ax % ndim for ax in axes)


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit("sum", (a,), a.data.sum(axis=axes, keepdims=keepdims), rule)


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise ShapeError(f"mean: empty reduction over axes {axes} of shape {a.shape}")

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _emit("mean", (a,), a.data.mean(axis=axes, keepdims=keepdims), rule)


def broadcast_to(a, shape) -> Tensor:
    """
    Expand size-1 axes (and implicit leading axes) to `shape`.

    """
    a = as_tensor(a)
    shape = tuple(shape)
    padded = (1,) * (len(shape) - a.ndim) + a.shape
    if len(padded) != len(shape) or any(
        have != want and have != 1 for have, want in zip(padded, shape)
    ):
        raise ShapeError(f"broadcast: cannot expand {a.shape} to {shape}")
    return _emit(
        "broadcast", (a,), np.broadcast_to(a.data, shape).copy(),
        lambda g: (_unbroadcast(g, a.shape),),
    )


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        value = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _emit("reshape", (a,), value, lambda g: (g.reshape(a.shape),))


def take_slice(a, index) -> Tensor:
    a = as_tensor(a)
    try:
        value = a.data[index]
    except (IndexError, TypeError) as err:
        raise ShapeError(f"slice: bad index {index!r} for shape {a.shape}: {err}") from None

    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _emit("slice", (a,), np.array(value), rule)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: shapes {shapes} disagree off axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit("concat", tensors, value, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stop_gradient(a) -> Tensor:
    """
    Copy the value into a fresh constant; nothing upstream receives gradient
    through it.

    """
    return Tensor(as_tensor(a).data)


def backward(loss: Tensor):
    """
    Accumulate d(loss)/d(leaf) into every gradient-requiring leaf.

    Args:
        loss (Tensor): A scalar produced on a live tape.

    Raises:
        TapeError: If loss is not scalar, was not recorded, or its graph was
            already replayed.

    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = getattr(loss, "shape", type(loss).__name__)
        raise TapeError(f"backward needs a scalar loss, got shape {shape}")
    Tape.collect(loss).replay(loss)
