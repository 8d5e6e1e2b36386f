"""Dense float64 tensors with a reverse-mode gradient tape.

Every operation on a :class:`Tensor` that has a ``requires_grad`` input
records its parents and a closure computing the vector-Jacobian product.
:func:`backward` walks the recorded graph in reverse topological order and
accumulates gradients into the leaf tensors (the learnable parameters).

Closures capture the numpy arrays seen during the forward pass, so an
optimizer that rebinds ``param.data`` after a step does not disturb graphs
that are still alive.
"""

from contextlib import contextmanager
from contextvars import ContextVar
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from mapweave.errors import ContractError, EvaluationError, NumericError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

# Scoped to the current thread or asyncio task
_RECORDING: ContextVar[bool] = ContextVar("mapweave_tape_recording", default=True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate operations without recording them on the tape."""
    token = _RECORDING.set(False)
    try:
        yield
    finally:
        _RECORDING.reset(token)


def is_recording() -> bool:
    return _RECORDING.get()


class Tensor:
    """A dense row-major float64 array that can take part in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _parents: tuple["Tensor", ...] = (),
        _backward: Optional[BackwardFn] = None,
    ):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents = _parents
        self._backward = _backward

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Return a graph-free copy of this tensor's values."""
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other) -> "Tensor":
        return add(as_tensor(other), neg(self))

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key) -> "Tensor":
        return index(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value) -> Tensor:
    """Wrap a constant as a non-differentiable tensor (tensors pass through)."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward: BackwardFn) -> Tensor:
    parents = tuple(parents)
    if _RECORDING.get() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeError("cannot broadcast operands", a.shape, b.shape) from e
    a_shape, b_shape = a.shape, b.shape
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    a_data, b_data = a.data, b.data
    try:
        out = a_data * b_data
    except ValueError as e:
        raise ShapeError("cannot broadcast operands", a.shape, b.shape) from e
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g * b_data, a_data.shape),
            _unbroadcast(g * a_data, b_data.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _make(out, (a,), lambda g: (-g * out * out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a_data = a.data
    return _make(np.log(a_data), (a,), lambda g: (g / a_data,))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    active = a.data > 0
    return _make(np.where(active, a.data, 0.0), (a,), lambda g: (g * active,))


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient is zero where the clamp is active."""
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def row_norm(a: Tensor) -> Tensor:
    """Euclidean norm along the last axis; subgradient 0 at the origin."""
    a_data = a.data
    norms = np.sqrt(np.sum(a_data * a_data, axis=-1))

    def _backward(g: np.ndarray):
        safe = np.where(norms > 0, norms, 1.0)
        unit = np.where((norms > 0)[..., None], a_data / safe[..., None], 0.0)
        return (g[..., None] * unit,)

    return _make(norms, (a,), _backward)


# -- structural --------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul inner dimensions disagree", a.shape, b.shape)
    a_data, b_data = a.data, b.data
    return _make(
        a_data @ b_data,
        (a, b),
        lambda g: (g @ b_data.T, a_data.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("transpose expects a matrix", a.shape)
    return _make(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError("cannot reshape", src, tuple(shape)) from e
    return _make(out, (a,), lambda g: (g.reshape(src),))


def index(a: Tensor, key) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate gradient."""
    src = a.shape

    def _backward(g: np.ndarray):
        full = np.zeros(src)
        np.add.at(full, key, g)
        return (full,)

    return _make(a.data[key], (a,), _backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError("cannot concatenate", *(t.shape for t in tensors)) from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    return concat([reshape(as_tensor(t), (1, *as_tensor(t).shape)) for t in tensors], axis=0)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape

    def _backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), _backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod(np.array(a.shape)[np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / float(count))


def softmax(a: Tensor, allowed: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis, optionally restricted to ``allowed`` entries.

    Rows with no allowed entry use every entry instead.
    """
    logits = a.data
    if allowed is not None:
        allowed = np.broadcast_to(np.asarray(allowed, dtype=bool), logits.shape)
        empty_rows = ~allowed.any(axis=-1, keepdims=True)
        allowed = allowed | empty_rows
        logits = np.where(allowed, logits, -np.inf)
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    weights = np.exp(shifted)
    out = weights / np.sum(weights, axis=-1, keepdims=True)

    def _backward(g: np.ndarray):
        return (out * (g - np.sum(out * g, axis=-1, keepdims=True)),)

    return _make(out, (a,), _backward)


# -- gradient tape -----------------------------------------------------


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf.

    Raises:
        ContractError: If ``loss`` is not a scalar
        NumericError: If a leaf gradient comes out non-finite
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            if not np.all(np.isfinite(node.grad)):
                raise NumericError(f"non-finite gradient for {node.name or 'tensor'}")
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            adjoints[key] = adjoints[key] + pg if key in adjoints else pg


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords_per_param: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Compare taped gradients against central differences.

    Args:
        f: Zero-argument closure rebuilding the scalar loss from current values
        params: Leaf tensors to check (perturbed in place, restored afterwards)
        eps: Perturbation size, within [1e-7, 1e-3]
        max_coords_per_param: If set, check a seeded random subset of coordinates
        seed: Seed for coordinate sub-sampling

    Returns:
        Max over checked coordinates of |analytic - numeric| / max(1, |numeric|)

    Raises:
        ContractError: If eps is out of range
        EvaluationError: If f produces a non-finite value
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps must lie in [1e-7, 1e-3], got {eps}")

    def _value() -> float:
        value = f().item()
        if not np.isfinite(value):
            raise EvaluationError(f"function under check returned {value}")
        return value

    for p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.item()):
        raise EvaluationError(f"function under check returned {loss.item()}")
    backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, grad in zip(params, analytic):
        coords = list(np.ndindex(*p.shape))
        if max_coords_per_param is not None and len(coords) > max_coords_per_param:
            picks = rng.choice(len(coords), size=max_coords_per_param, replace=False)
            coords = [coords[i] for i in sorted(picks)]
        for idx in coords:
            original = p.data[idx]
            p.data[idx] = original + eps
            plus = _value()
            p.data[idx] = original - eps
            minus = _value()
            p.data[idx] = original
            numeric = (plus - minus) / (2.0 * eps)
            worst = max(worst, abs(grad[idx] - numeric) / max(1.0, abs(numeric)))
    return worst
