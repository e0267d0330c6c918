"""
Reverse-mode differentiation over numpy arrays.

An :class:`AdjointTape` records every primitive applied to tracked tensors while it
is active. Nodes are appended in evaluation order, so the tape is topologically
sorted by construction and the backward sweep walks it once in reverse.

Only the flat parameter vector is a leaf. Data arrays and Python scalars enter as
constants and receive no adjoint.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Callable, Optional, Sequence, Union

import numpy as np

from hybrid_ode.core.exceptions import ContractError, ShapeError

if TYPE_CHECKING:
    from .params import ParamVector

Vjp = Callable[[np.ndarray], np.ndarray]
ArrayLike = Union["Tensor", np.ndarray, float, int]

_ACTIVE_TAPE: contextvars.ContextVar[Optional[AdjointTape]] = contextvars.ContextVar(
    "hybrid_ode_active_tape",
    default=None,
)


@dataclass(frozen=True)
class TapeNode:
    """One recorded primitive: parent node indices and their local adjoint maps."""

    op: str
    parents: tuple[int, ...]
    vjps: tuple[Vjp, ...]


class AdjointTape:
    """
    Recorder for reverse-mode gradients of a scalar with respect to a ParamVector.

    Example:
        ```python
        with AdjointTape() as tape:
            theta = tape.watch(params)
            loss = (theta * theta).sum()
            tape.set_root(loss)
        grad = reverse_grad(tape)
        ```

    """

    def __init__(self) -> None:
        """Initialize an empty tape."""
        self.nodes: list[TapeNode] = []
        self.root: Tensor | None = None
        self._leaf: Tensor | None = None
        self._token: contextvars.Token[Optional[AdjointTape]] | None = None

    def __enter__(self) -> AdjointTape:
        """Activate the tape for the current context."""
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        """Deactivate the tape."""
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None

    def watch(self, params: ParamVector) -> Tensor:
        """
        Register the flat parameter vector as the tape's leaf.

        Args:
            params: Parameter vector whose gradient is requested

        Returns:
            Tracked tensor holding a copy of the parameter values

        """
        if self._leaf is not None:
            msg = "tape already watches a parameter vector"
            raise ContractError(msg)
        index = self._append(TapeNode("leaf", (), ()))
        self._leaf = Tensor(np.array(params.values, dtype=np.float64), self, index)
        return self._leaf

    def set_root(self, root: Tensor) -> None:
        """Set the scalar output whose gradient :func:`reverse_grad` computes."""
        self.root = root

    @property
    def leaf(self) -> Tensor | None:
        """The watched parameter tensor, if any."""
        return self._leaf

    def _append(self, node: TapeNode) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1


def active_tape() -> AdjointTape | None:
    """Return the tape recording in the current context, if any."""
    return _ACTIVE_TAPE.get()


class Tensor:
    """A float64 array that may be tracked on an :class:`AdjointTape`."""

    __slots__ = ("index", "tape", "value")

    # ndarray <op> Tensor must dispatch to Tensor's reflected operators.
    __array_ufunc__ = None

    def __init__(
        self,
        value: Any,
        tape: AdjointTape | None = None,
        index: int | None = None,
    ) -> None:
        """
        Wrap a value.

        Args:
            value: Array-like value (converted to float64)
            tape: Tape the tensor is recorded on
            index: Node index on that tape

        """
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.index = index

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape of the underlying array."""
        return self.value.shape

    @property
    def ndim(self) -> int:
        """Number of dimensions."""
        return self.value.ndim

    @property
    def size(self) -> int:
        """Number of elements."""
        return int(self.value.size)

    @property
    def tracked(self) -> bool:
        """Whether gradients flow into this tensor on the active tape."""
        return self.tape is not None and self.tape is active_tape()

    def item(self) -> float:
        """Return the value of a one-element tensor as a float."""
        return float(self.value.reshape(-1)[0])

    def __len__(self) -> int:
        """Length of the leading axis."""
        return len(self.value)

    def __repr__(self) -> str:
        """Return string representation of the tensor."""
        return f"Tensor({self.value!r}, tracked={self.tracked})"

    def __add__(self, other: ArrayLike) -> Tensor:
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> Tensor:
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> Tensor:
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> Tensor:
        return div(other, self)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __pow__(self, exponent: float) -> Tensor:
        return power(self, exponent)

    def __matmul__(self, other: ArrayLike) -> Tensor:
        return matmul(self, other)

    def __rmatmul__(self, other: ArrayLike) -> Tensor:
        return matmul(other, self)

    def __getitem__(self, index: Any) -> Tensor:
        return getitem(self, index)

    def sum(self, axis: int | None = None) -> Tensor:
        """Sum over an axis (all elements when None)."""
        return tsum(self, axis)

    def mean(self, axis: int | None = None) -> Tensor:
        """Mean over an axis (all elements when None)."""
        return tmean(self, axis)

    def reshape(self, *shape: int) -> Tensor:
        """Reshape without copying semantics."""
        return reshape(self, shape)

    @property
    def T(self) -> Tensor:
        """Transpose of a matrix."""
        return transpose(self)


def as_tensor(x: ArrayLike) -> Tensor:
    """Lift a constant to an untracked tensor; tensors pass through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def constant(x: ArrayLike) -> np.ndarray:
    """Return the plain value of a tensor or array."""
    if isinstance(x, Tensor):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _record(
    op: str,
    value: np.ndarray,
    inputs: Sequence[tuple[Tensor, Vjp]],
) -> Tensor:
    tape = active_tape()
    if tape is None:
        return Tensor(value)
    parents: list[int] = []
    vjps: list[Vjp] = []
    for tensor, vjp in inputs:
        if tensor.tape is tape and tensor.index is not None:
            parents.append(tensor.index)
            vjps.append(vjp)
    if not parents:
        return Tensor(value)
    index = tape._append(TapeNode(op, tuple(parents), tuple(vjps)))
    return Tensor(value, tape, index)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# Elementwise arithmetic


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise a + b with broadcasting."""
    ta, tb = as_tensor(a), as_tensor(b)
    return _record(
        "add",
        ta.value + tb.value,
        [
            (ta, lambda g: _unbroadcast(g, ta.shape)),
            (tb, lambda g: _unbroadcast(g, tb.shape)),
        ],
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise a - b with broadcasting."""
    ta, tb = as_tensor(a), as_tensor(b)
    return _record(
        "sub",
        ta.value - tb.value,
        [
            (ta, lambda g: _unbroadcast(g, ta.shape)),
            (tb, lambda g: _unbroadcast(-g, tb.shape)),
        ],
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise a * b with broadcasting."""
    ta, tb = as_tensor(a), as_tensor(b)
    return _record(
        "mul",
        ta.value * tb.value,
        [
            (ta, lambda g: _unbroadcast(g * tb.value, ta.shape)),
            (tb, lambda g: _unbroadcast(g * ta.value, tb.shape)),
        ],
    )


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise a / b with broadcasting."""
    ta, tb = as_tensor(a), as_tensor(b)
    out = ta.value / tb.value
    return _record(
        "div",
        out,
        [
            (ta, lambda g: _unbroadcast(g / tb.value, ta.shape)),
            (tb, lambda g: _unbroadcast(-g * out / tb.value, tb.shape)),
        ],
    )


def neg(a: ArrayLike) -> Tensor:
    """Elementwise negation."""
    ta = as_tensor(a)
    return _record("neg", -ta.value, [(ta, lambda g: -g)])


def power(a: ArrayLike, exponent: float) -> Tensor:
    """Elementwise a ** exponent for a constant exponent."""
    ta = as_tensor(a)
    return _record(
        "pow",
        ta.value**exponent,
        [(ta, lambda g: g * exponent * ta.value ** (exponent - 1))],
    )


def square(a: ArrayLike) -> Tensor:
    """Elementwise a ** 2."""
    ta = as_tensor(a)
    return _record("square", ta.value * ta.value, [(ta, lambda g: 2.0 * g * ta.value)])


def exp(a: ArrayLike) -> Tensor:
    """Elementwise exponential."""
    ta = as_tensor(a)
    out = np.exp(ta.value)
    return _record("exp", out, [(ta, lambda g: g * out)])


def log(a: ArrayLike) -> Tensor:
    """Elementwise natural logarithm."""
    ta = as_tensor(a)
    return _record("log", np.log(ta.value), [(ta, lambda g: g / ta.value)])


def tanh(a: ArrayLike) -> Tensor:
    """Elementwise hyperbolic tangent."""
    ta = as_tensor(a)
    out = np.tanh(ta.value)
    return _record("tanh", out, [(ta, lambda g: g * (1.0 - out * out))])


def sigmoid(a: ArrayLike) -> Tensor:
    """Elementwise logistic function."""
    ta = as_tensor(a)
    out = 0.5 * (np.tanh(0.5 * ta.value) + 1.0)
    return _record("sigmoid", out, [(ta, lambda g: g * out * (1.0 - out))])


def relu(a: ArrayLike) -> Tensor:
    """Elementwise max(a, 0); the subgradient at 0 is 0."""
    ta = as_tensor(a)
    mask = ta.value > 0.0
    return _record("relu", np.where(mask, ta.value, 0.0), [(ta, lambda g: g * mask)])


def where(condition: np.ndarray, a: ArrayLike, b: ArrayLike) -> Tensor:
    """Select a where the constant condition holds, else b."""
    cond = np.asarray(condition, dtype=bool)
    ta, tb = as_tensor(a), as_tensor(b)
    return _record(
        "where",
        np.where(cond, ta.value, tb.value),
        [
            (ta, lambda g: _unbroadcast(np.where(cond, g, 0.0), ta.shape)),
            (tb, lambda g: _unbroadcast(np.where(cond, 0.0, g), tb.shape)),
        ],
    )


# Reductions and structure


def tsum(a: ArrayLike, axis: int | None = None) -> Tensor:
    """Sum over an axis, or over all elements when axis is None."""
    ta = as_tensor(a)
    shape = ta.shape

    def vjp(g: np.ndarray) -> np.ndarray:
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    return _record("sum", np.sum(ta.value, axis=axis), [(ta, vjp)])


def tmean(a: ArrayLike, axis: int | None = None) -> Tensor:
    """Mean over an axis, or over all elements when axis is None."""
    ta = as_tensor(a)
    count = ta.size if axis is None else ta.shape[axis]
    return div(tsum(ta, axis), float(count))


def _extremum(a: ArrayLike, axis: int, pick: Callable[..., np.ndarray], op: str) -> Tensor:
    ta = as_tensor(a)
    idx = pick(ta.value, axis=axis)
    out = np.take_along_axis(ta.value, np.expand_dims(idx, axis), axis=axis)

    def vjp(g: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(ta.value)
        np.put_along_axis(grad, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return grad

    return _record(op, np.squeeze(out, axis=axis), [(ta, vjp)])


def tmax(a: ArrayLike, axis: int = -1) -> Tensor:
    """Maximum along an axis; the gradient goes to the first maximizer."""
    return _extremum(a, axis, np.argmax, "max")


def tmin(a: ArrayLike, axis: int = -1) -> Tensor:
    """Minimum along an axis; the gradient goes to the first minimizer."""
    return _extremum(a, axis, np.argmin, "min")


def getitem(a: ArrayLike, index: Any) -> Tensor:
    """Index or slice with a constant index."""
    ta = as_tensor(a)
    shape = ta.shape

    def vjp(g: np.ndarray) -> np.ndarray:
        grad = np.zeros(shape)
        np.add.at(grad, index, g)
        return grad

    return _record("getitem", ta.value[index], [(ta, vjp)])


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    """Reshape to a new shape with the same number of elements."""
    ta = as_tensor(a)
    old = ta.shape
    return _record("reshape", ta.value.reshape(tuple(shape)), [(ta, lambda g: g.reshape(old))])


def transpose(a: ArrayLike) -> Tensor:
    """Reverse the axes of an array."""
    ta = as_tensor(a)
    return _record("transpose", ta.value.T, [(ta, lambda g: g.T)])


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    """Concatenate along an existing axis."""
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        msg = "concat needs at least one tensor"
        raise ShapeError(msg)
    value = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0, *sizes])

    def make_vjp(k: int) -> Vjp:
        lo, hi = int(bounds[k]), int(bounds[k + 1])
        return lambda g: np.take(g, np.arange(lo, hi), axis=axis)

    return _record("concat", value, [(p, make_vjp(k)) for k, p in enumerate(parts)])


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    """Stack along a new axis."""
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        msg = "stack needs at least one tensor"
        raise ShapeError(msg)
    value = np.stack([p.value for p in parts], axis=axis)

    def make_vjp(k: int) -> Vjp:
        return lambda g: np.take(g, k, axis=axis)

    return _record("stack", value, [(p, make_vjp(k)) for k, p in enumerate(parts)])


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product for 1-D and 2-D operands."""
    ta, tb = as_tensor(a), as_tensor(b)
    if ta.ndim not in (1, 2) or tb.ndim not in (1, 2):
        msg = f"matmul supports 1-D and 2-D operands, got {ta.shape} @ {tb.shape}"
        raise ShapeError(msg)
    if ta.shape[-1] != tb.shape[0]:
        msg = f"matmul inner dimensions differ: {ta.shape} @ {tb.shape}"
        raise ShapeError(msg)

    def vjp_a(g: np.ndarray) -> np.ndarray:
        if tb.ndim == 1:
            return np.multiply.outer(g, tb.value)
        return g @ tb.value.T

    def vjp_b(g: np.ndarray) -> np.ndarray:
        if ta.ndim == 1:
            return np.multiply.outer(ta.value, g)
        return ta.value.T @ g

    return _record("matmul", ta.value @ tb.value, [(ta, vjp_a), (tb, vjp_b)])


def logsumexp(a: ArrayLike, axis: int = -1) -> Tensor:
    """Stable log(sum(exp(a))) along an axis."""
    ta = as_tensor(a)
    shift = np.max(ta.value, axis=axis, keepdims=True)
    shifted = sub(ta, shift)
    return add(log(tsum(exp(shifted), axis)), np.squeeze(shift, axis=axis))


def replace_column(a: ArrayLike, column: int, values: ArrayLike) -> Tensor:
    """Return a copy of a 2-D tensor with one column replaced."""
    ta = as_tensor(a)
    tv = reshape(as_tensor(values), (ta.shape[0], 1))
    return concat([ta[:, :column], tv, ta[:, column + 1 :]], axis=1)


def reverse_grad(tape: AdjointTape, root: Tensor | None = None) -> np.ndarray:
    """
    Compute d(root)/d(params) for the parameter vector watched by the tape.

    Args:
        tape: Tape holding the recorded computation
        root: Scalar output (defaults to ``tape.root``)

    Returns:
        Gradient array with the length of the watched parameter vector

    Raises:
        ContractError: If the root is missing or not a scalar, or no leaf is watched

    """
    root = root if root is not None else tape.root
    leaf = tape.leaf
    if leaf is None or leaf.index is None:
        msg = "tape does not watch a parameter vector"
        raise ContractError(msg)
    if root is None:
        msg = "tape has no root"
        raise ContractError(msg)
    if root.size != 1:
        msg = f"gradient root must be scalar, got shape {root.shape}"
        raise ContractError(msg)
    if root.tape is not tape or root.index is None:
        return np.zeros(leaf.size)

    adjoints: list[np.ndarray | None] = [None] * len(tape.nodes)
    adjoints[root.index] = np.ones_like(root.value)
    for i in range(root.index, -1, -1):
        adjoint = adjoints[i]
        if adjoint is None:
            continue
        node = tape.nodes[i]
        for parent, vjp in zip(node.parents, node.vjps):
            contribution = vjp(adjoint)
            previous = adjoints[parent]
            adjoints[parent] = contribution if previous is None else previous + contribution
        if i != leaf.index:
            adjoints[i] = None

    grad = adjoints[leaf.index]
    if grad is None:
        return np.zeros(leaf.size)
    return np.asarray(grad, dtype=np.float64).reshape(-1)
