"""
Minimal reverse-mode differentiation over dense float64 arrays.

A `Tape` records every primitive applied to tensors that descend from a
watched leaf. Tensors with no tape are constants: primitives applied only to
constants compute their values and record nothing, so the same graph code
serves both differentiable and plain evaluation with identical arithmetic.

The primitive set is closed: matmul, add, add_bias, mul, tanh, exp, log,
clamp, sum, mean, minimum, square. Everything else (subtraction, negation,
scaling) is a composition of these.

Example:
    >>> from conflict_ppo import diffcore as dc
    >>> out = dc.forward(lambda x: dc.square(x), [np.array([3.0])])
    >>> dc.backward(out.tape, np.ones(1))
    [array([6.])]
"""

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import ShapeError, TapeConsumedError, ValidationError

Array = NDArray[np.float64]
VJP = Callable[[Array], tuple[Array | None, ...]]


class Tensor:
    """A float64 array, optionally tracked by a tape."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data: ArrayLike, tape: "Tape | None" = None, node: int | None = None):
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tracked = "tracked" if self.tape is not None else "constant"
        return f"Tensor(shape={self.shape}, {tracked})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def constant(value: ArrayLike) -> Tensor:
    """Wrap a value as an untracked tensor."""
    return Tensor(np.array(value, dtype=np.float64))


@dataclass
class _Record:
    op: str
    inputs: tuple[int | None, ...]
    output: int
    vjp: VJP


class Tape:
    """Ordered record of primitive applications, consumed by one backward pass.

    Node ids are assigned in creation order, so every input id precedes the
    record that consumes it.
    """

    def __init__(self) -> None:
        self.records: list[_Record] = []
        self.leaves: list[Tensor] = []
        self.output: int | None = None
        self.output_shape: tuple[int, ...] | None = None
        self.consumed = False
        self._next_node = 0

    def _new_node(self) -> int:
        node = self._next_node
        self._next_node += 1
        return node

    def watch(self, value: ArrayLike) -> Tensor:
        """Register a leaf parameter and return its tracked tensor."""
        leaf = Tensor(np.array(value, dtype=np.float64), self, self._new_node())
        self.leaves.append(leaf)
        return leaf

    def record(self, op: str, inputs: Sequence[Tensor], value: Array, vjp: VJP) -> Tensor:
        if self.consumed:
            raise TapeConsumedError(f"{op}: tape already consumed by backward")
        ids = tuple(t.node if t.tape is self else None for t in inputs)
        out = Tensor(value, self, self._new_node())
        assert out.node is not None
        self.records.append(_Record(op, ids, out.node, vjp))
        return out

    def __len__(self) -> int:
        return len(self.records)


def _emit(op: str, inputs: Sequence[Tensor], value: Array, vjp: VJP) -> Tensor:
    tapes = {id(t.tape): t.tape for t in inputs if t.tape is not None}
    if not tapes:
        return Tensor(value)
    if len(tapes) > 1:
        raise ValidationError(f"{op}: inputs are recorded on different tapes")
    (tape,) = tapes.values()
    assert tape is not None
    return tape.record(op, inputs, value, vjp)


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(
            f"{op}: operand shapes differ ({a.shape} vs {b.shape})",
            {"primitive": op, "shapes": [a.shape, b.shape]},
        )


# Primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: cannot multiply {a.shape} by {b.shape}",
            {"primitive": "matmul", "shapes": [a.shape, b.shape]},
        )
    av, bv = a.data, b.data
    return _emit("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a 1-D bias to every row of a 2-D tensor (the only broadcast supported)."""
    if x.data.ndim != 2 or bias.data.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeError(
            f"add_bias: bias {bias.shape} does not match rows of {x.shape}",
            {"primitive": "add_bias", "shapes": [x.shape, bias.shape]},
        )
    return _emit("add_bias", (x, bias), x.data + bias.data, lambda g: (g, g.sum(axis=0)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)
    av, bv = a.data, b.data
    return _emit("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _emit("exp", (x,), y, lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xv = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(xv)
    return _emit("log", (x,), y, lambda g: (g / xv,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip into [lo, hi]; the gradient passes where lo <= x <= hi."""
    if not lo <= hi:
        raise ShapeError(f"clamp: empty interval [{lo}, {hi}]", {"primitive": "clamp"})
    xv = x.data
    inside = ((xv >= lo) & (xv <= hi)).astype(np.float64)
    return _emit("clamp", (x,), np.clip(xv, lo, hi), lambda g: (g * inside,))


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is not None and not -len(shape) <= axis < len(shape):
        raise ShapeError(f"sum: axis {axis} out of range for {shape}", {"primitive": "sum"})

    def vjp(g: Array) -> tuple[Array]:
        if axis is None:
            return (np.full(shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit("sum", (x,), np.asarray(x.data.sum(axis=axis)), vjp)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape
    if axis is not None and not -len(shape) <= axis < len(shape):
        raise ShapeError(f"mean: axis {axis} out of range for {shape}", {"primitive": "mean"})
    count = x.size if axis is None else shape[axis]

    def vjp(g: Array) -> tuple[Array]:
        if axis is None:
            return (np.full(shape, float(g) / count),)
        return (np.broadcast_to(np.expand_dims(g / count, axis), shape).copy(),)

    return _emit("mean", (x,), np.asarray(x.data.mean(axis=axis)), vjp)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties send the gradient to the first operand."""
    _require_same_shape("minimum", a, b)
    first = (a.data <= b.data).astype(np.float64)
    return _emit(
        "minimum",
        (a, b),
        np.minimum(a.data, b.data),
        lambda g: (g * first, g * (1.0 - first)),
    )


def square(x: Tensor) -> Tensor:
    xv = x.data
    return _emit("square", (x,), xv * xv, lambda g: (2.0 * g * xv,))


# Compositions


def scale(x: Tensor, factor: float) -> Tensor:
    return mul(x, constant(np.full(x.shape, factor)))


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def shift(x: Tensor, offset: float) -> Tensor:
    return add(x, constant(np.full(x.shape, offset)))


# Driving a tape


def forward(
    graph: Callable[..., Tensor],
    inputs: Sequence[ArrayLike],
    input_shapes: Sequence[tuple[int, ...]] | None = None,
) -> Tensor:
    """
    Evaluate `graph` on freshly watched copies of `inputs`, recording a tape.

    Args:
        graph: Callable taking one tensor per input and returning the output tensor.
        inputs: Leaf values, in the order gradients will be returned.
        input_shapes: Optional declared shapes checked before evaluation.

    Returns:
        The output tensor; its `tape` attribute holds the recorded tape.

    Raises:
        ShapeError: If an input does not conform or a primitive rejects its operands.
    """
    if input_shapes is not None:
        if len(input_shapes) != len(inputs):
            raise ShapeError(
                f"forward: graph declares {len(input_shapes)} inputs, got {len(inputs)}",
                {"primitive": "forward"},
            )
        for index, (value, declared) in enumerate(zip(inputs, input_shapes)):
            actual = np.shape(value)
            if tuple(actual) != tuple(declared):
                raise ShapeError(
                    f"forward: input {index} has shape {actual}, graph declares {declared}",
                    {"primitive": "forward", "input": index},
                )

    tape = Tape()
    leaves = [tape.watch(value) for value in inputs]
    out = graph(*leaves)
    if out.tape is not tape:
        # Output does not depend on any leaf; give it a node nobody feeds.
        out = Tensor(out.data, tape, tape._new_node())
    tape.output = out.node
    tape.output_shape = out.shape
    return out


def backward(tape: Tape, seed: ArrayLike) -> list[Array]:
    """
    Propagate `seed` from the tape's output back to every watched leaf.

    Args:
        tape: A tape produced by `forward`; consumed by this call.
        seed: Cotangent with the output's shape.

    Returns:
        One gradient array per leaf, in watch order. Leaves not on any path
        to the output receive exact zeros.

    Raises:
        TapeConsumedError: If the tape has already been used.
        ShapeError: If the seed shape differs from the output shape.
    """
    if tape.consumed:
        raise TapeConsumedError("backward: tape already consumed")
    if tape.output is None or tape.output_shape is None:
        raise ValidationError("backward: tape has no recorded output")
    cotangent = np.asarray(seed, dtype=np.float64)
    if cotangent.shape != tape.output_shape:
        raise ShapeError(
            f"backward: seed shape {cotangent.shape} != output shape {tape.output_shape}",
            {"primitive": "backward"},
        )
    tape.consumed = True

    grads: dict[int, Array] = {tape.output: cotangent}
    for rec in reversed(tape.records):
        g = grads.pop(rec.output, None)
        if g is None:
            continue
        for node, contribution in zip(rec.inputs, rec.vjp(g)):
            if node is None or contribution is None:
                continue
            if node in grads:
                grads[node] = grads[node] + contribution
            else:
                grads[node] = np.asarray(contribution, dtype=np.float64)

    result = []
    for leaf in tape.leaves:
        assert leaf.node is not None
        grad = grads.get(leaf.node)
        result.append(np.zeros(leaf.shape) if grad is None else np.array(grad, dtype=np.float64))
    return result


def value_and_grad(
    graph: Callable[..., Tensor], inputs: Sequence[ArrayLike]
) -> tuple[float, list[Array]]:
    """Forward + backward for a scalar-valued graph."""
    out = forward(graph, inputs)
    if out.size != 1:
        raise ShapeError(
            f"value_and_grad: output has shape {out.shape}, expected a scalar",
            {"primitive": "value_and_grad"},
        )
    assert out.tape is not None
    return out.item(), backward(out.tape, np.ones(out.shape))


# Flat parameter vectors


def flatten_gradients(gradients: Sequence[ArrayLike]) -> Array:
    """Concatenate per-parameter gradients in registry order."""
    if not gradients:
        return np.zeros(0)
    return np.concatenate([np.ravel(np.asarray(g, dtype=np.float64)) for g in gradients])


def unflatten_gradients(flat: ArrayLike, shapes: Sequence[tuple[int, ...]]) -> list[Array]:
    """Inverse of `flatten_gradients` for the given parameter shapes."""
    vector = np.asarray(flat, dtype=np.float64)
    sizes = [int(np.prod(shape, dtype=np.int64)) for shape in shapes]
    if vector.ndim != 1 or vector.size != np.sum(sizes, dtype=np.int64):
        raise ShapeError(
            f"unflatten: vector of size {vector.size} does not fit shapes {list(shapes)}",
            {"primitive": "unflatten"},
        )
    parts = []
    offset = 0
    for shape, size in zip(shapes, sizes):
        parts.append(vector[offset : offset + size].reshape(shape).copy())
        offset += size
    return parts


# Gradient checking


def numerical_gradient(
    fn: Callable[[list[Array]], float], params: Sequence[ArrayLike], step: float = 1e-5
) -> list[Array]:
    """Central finite differences of a scalar function of several arrays."""
    values = [np.array(p, dtype=np.float64) for p in params]
    grads = []
    for value in values:
        grad = np.zeros_like(value)
        flat = value.reshape(-1)
        grad_flat = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            f_plus = fn(values)
            flat[i] = original - step
            f_minus = fn(values)
            flat[i] = original
            grad_flat[i] = (f_plus - f_minus) / (2.0 * step)
        grads.append(grad)
    return grads


def relative_error(analytic: ArrayLike, numeric: ArrayLike, floor: float = 1e-8) -> float:
    a = np.ravel(np.asarray(analytic, dtype=np.float64))
    n = np.ravel(np.asarray(numeric, dtype=np.float64))
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)), floor)
    return float(np.linalg.norm(a - n)) / denom


__all__ = [
    "Array",
    "Tensor",
    "Tape",
    "constant",
    "matmul",
    "add",
    "add_bias",
    "mul",
    "tanh",
    "exp",
    "log",
    "clamp",
    "sum",
    "mean",
    "minimum",
    "square",
    "scale",
    "neg",
    "sub",
    "shift",
    "forward",
    "backward",
    "value_and_grad",
    "flatten_gradients",
    "unflatten_gradients",
    "numerical_gradient",
    "relative_error",
]
