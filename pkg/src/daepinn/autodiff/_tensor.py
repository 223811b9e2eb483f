"""Dense float64 tensors recording their primitives on a `Tape`.

The `Tensor` class uses the Python data model for the arithmetic operators, so expressions such as
`(1 - z) * u + z * v` record the same nodes as the equivalent `add`/`mul` calls. Operands that are plain numbers or
arrays are treated as constants.
"""
from typing import Any, Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from daepinn.autodiff._tape import Tape, tape_context


class Tensor:
    """A float64 array, optionally recorded on a tape.

    Attributes
    ----------
    value: np.ndarray
        The forward value.
    tape: Optional[Tape]
        The tape this tensor was recorded on, `None` for constants and untracked results.
    index: Optional[int]
        The node index on the tape.
    grad: Optional[np.ndarray]
        Populated by `Tape.backward(..., wrt=[tensor])`.
    """

    # makes `ndarray <op> Tensor` dispatch to the reflected Tensor operator
    __array_priority__ = 1000

    def __init__(self, value, tape: Optional[Tape] = None, index: Optional[int] = None, name: Optional[str] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.index = index
        self.name = name
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        return float(self.value.item())

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, tracked={self.tracked})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None) -> "Tensor":
        return reduce_sum(self, axis)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None) -> "Tensor":
        return reduce_mean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


Operand = Union[Tensor, np.ndarray, float, int, Sequence[Any]]


def variable(value, name: Optional[str] = None, requires_grad: bool = True) -> Tensor:
    """Creates a leaf on the innermost active tape, or an untracked tensor when no tape is active"""
    tape = tape_context.current()
    if tape is None:
        return Tensor(value, name=name)
    return tape.variable(value, name=name, requires_grad=requires_grad)


def constant(value) -> Tensor:
    """Wraps a value that is never differentiated"""
    return Tensor(value)


def _lift(x: Operand) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*ts: Tensor) -> Optional[Tape]:
    tape = None
    for t in ts:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise ValueError("Operands are recorded on different tapes")
    return tape


def _record(op: str, value: np.ndarray, operands: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = _tape_of(*operands)
    if tape is None:
        return Tensor(value)
    inputs = tuple(t.index if t.tape is tape else None for t in operands)
    return Tensor(value, tape=tape, index=tape.record(op, value.shape, inputs, vjp))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sums a broadcast gradient back down to the operand shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"Cannot {op} tensors of shapes {a.shape} and {b.shape}") from None


def add(x: Operand, y: Operand) -> Tensor:
    a, b = _lift(x), _lift(y)
    _broadcast_check("add", a, b)
    return _record("add", a.value + b.value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(x: Operand, y: Operand) -> Tensor:
    a, b = _lift(x), _lift(y)
    _broadcast_check("subtract", a, b)
    return _record("sub", a.value - b.value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(x: Operand, y: Operand) -> Tensor:
    a, b = _lift(x), _lift(y)
    _broadcast_check("multiply", a, b)
    return _record(
        "mul",
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def div(x: Operand, y: Operand) -> Tensor:
    """Elementwise quotient. A zero denominator raises `ZeroDivisionError`"""
    a, b = _lift(x), _lift(y)
    _broadcast_check("divide", a, b)
    if np.any(b.value == 0.0):
        raise ZeroDivisionError("Division by a tensor holding zero entries")
    q = a.value / b.value
    return _record(
        "div",
        q,
        (a, b),
        lambda g: (_unbroadcast(g / b.value, a.shape), _unbroadcast(-g * q / b.value, b.shape)),
    )


def neg(x: Operand) -> Tensor:
    a = _lift(x)
    return _record("neg", -a.value, (a,), lambda g: (-g,))


def scale(x: Operand, c: float) -> Tensor:
    """Multiplication by a constant scalar"""
    a = _lift(x)
    c = float(c)
    return _record("scale", c * a.value, (a,), lambda g: (c * g,))


def matmul(x: Operand, y: Operand) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast as in `numpy.matmul`"""
    a, b = _lift(x), _lift(y)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"Cannot matmul tensors of shapes {a.shape} and {b.shape}")
    out = a.value @ b.value
    return _record(
        "matmul",
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape),
            _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape),
        ),
    )


def affine(x: Operand, w: Operand, b: Operand) -> Tensor:
    """`x @ w + b` with `b` broadcast over the batch"""
    return add(matmul(x, w), b)


def sin(x: Operand) -> Tensor:
    a = _lift(x)
    return _record("sin", np.sin(a.value), (a,), lambda g: (g * np.cos(a.value),))


def cos(x: Operand) -> Tensor:
    a = _lift(x)
    return _record("cos", np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),))


def square(x: Operand) -> Tensor:
    a = _lift(x)
    return _record("square", a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def softplus(x: Operand) -> Tensor:
    """`ln(1 + e^x)` in the overflow-safe form `max(x, 0) + ln(1 + e^-|x|)`, derivative the logistic sigmoid"""
    a = _lift(x)
    v = a.value
    out = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    return _record("softplus", out, (a,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * v)),))


def reduce_sum(x: Operand, axis: Optional[Union[int, Tuple[int, ...]]] = None) -> Tensor:
    a = _lift(x)
    out = np.sum(a.value, axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record("sum", np.asarray(out), (a,), vjp)


def reduce_mean(x: Operand, axis: Optional[Union[int, Tuple[int, ...]]] = None) -> Tensor:
    a = _lift(x)
    count = a.value.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(reduce_sum(a, axis), 1.0 / count)


def getitem(x: Operand, key) -> Tensor:
    """Basic and integer-array indexing; repeated indices accumulate in the adjoint"""
    a = _lift(x)
    out = a.value[key]

    def vjp(g):
        full = np.zeros(a.shape)
        np.add.at(full, key, g)
        return (full,)

    return _record("getitem", np.array(out), (a,), vjp)


def reshape(x: Operand, shape: Sequence[int]) -> Tensor:
    a = _lift(x)
    try:
        out = a.value.reshape(tuple(shape))
    except ValueError:
        raise ValueError(f"Cannot reshape a tensor of shape {a.shape} into {tuple(shape)}") from None
    return _record("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def concat(xs: Sequence[Operand], axis: int = -1) -> Tensor:
    ts: List[Tensor] = [_lift(x) for x in xs]
    if not ts:
        raise ValueError("Cannot concatenate an empty sequence")
    try:
        out = np.concatenate([t.value for t in ts], axis=axis)
    except ValueError:
        raise ValueError(f"Cannot concatenate tensors of shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _record("concat", out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(xs: Sequence[Operand], axis: int = 0) -> Tensor:
    ts: List[Tensor] = [_lift(x) for x in xs]
    if not ts:
        raise ValueError("Cannot stack an empty sequence")
    try:
        out = np.stack([t.value for t in ts], axis=axis)
    except ValueError:
        raise ValueError(f"Cannot stack tensors of shapes {[t.shape for t in ts]}") from None
    return _record("stack", out, ts, lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(ts))))
