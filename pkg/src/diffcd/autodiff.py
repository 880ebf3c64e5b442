"""Minimal reverse-mode automatic differentiation on numpy arrays.

The engine is define-by-run: every operation on :class:`Tensor` records its
parents and a vector-Jacobian closure, and :func:`backward` replays the tape
in reverse topological order. Everything is float64 by default; float32 is
accepted for training runs but gradient checks are only reliable at 64-bit.

Single-threaded evaluation is bit-deterministic: the topological order is
fixed by recording order and all accumulations use plain numpy sums.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError

Array = np.ndarray


def _as_array(x, dtype=np.float64) -> Array:
    if isinstance(x, np.ndarray):
        return x.astype(dtype, copy=False) if x.dtype != dtype else x
    return np.asarray(x, dtype=dtype)


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array with a gradient tape hook.

    Tensors are treated as immutable once created; optimizer updates build
    replacement arrays in place on parameter objects via ``assign_``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None, name=None):
        self.data = _as_array(data)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._vjp = _vjp
        self.name = name

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def assign_(self, values: Array) -> None:
        """Replace the stored values (optimizer use only)."""
        values = _as_array(values)
        if values.shape != self.data.shape:
            raise ShapeError(f"assign_ shape {values.shape} != {self.data.shape}")
        self.data = values

    def zero_grad(self) -> None:
        self.grad = None

    # -- tape plumbing -------------------------------------------------------
    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def _node(self, data, parents, vjp) -> "Tensor":
        return Tensor(data, _parents=parents, _vjp=vjp)

    # -- arithmetic ----------------------------------------------------------
    def __add__(self, other):
        other = Tensor._lift(other)
        out_data = self.data + other.data

        def vjp(g):
            return (_unbroadcast(g, self.data.shape), _unbroadcast(g, other.data.shape))

        return self._node(out_data, (self, other), vjp)

    __radd__ = __add__

    def __neg__(self):
        return self._node(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)
        out_data = self.data * other.data

        def vjp(g):
            return (
                _unbroadcast(g * other.data, self.data.shape),
                _unbroadcast(g * self.data, other.data.shape),
            )

        return self._node(out_data, (self, other), vjp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)
        out_data = self.data / other.data

        def vjp(g):
            return (
                _unbroadcast(g / other.data, self.data.shape),
                _unbroadcast(-g * self.data / (other.data**2), other.data.shape),
            )

        return self._node(out_data, (self, other), vjp)

    def __rtruediv__(self, other):
        return Tensor._lift(other) / self

    def __matmul__(self, other):
        return matmul(self, other)

    # -- reductions and shaping ----------------------------------------------
    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.data.shape).copy(),)

        return self._node(out_data, (self,), vjp)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        out_data = self.data.reshape(*shape)
        src_shape = self.data.shape
        return self._node(out_data, (self,), lambda g: (g.reshape(src_shape),))

    @property
    def T(self):
        return self._node(self.data.T.copy(), (self,), lambda g: (g.T.copy(),))


# ---------------------------------------------------------------------------
# free-function operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with reverse-mode support."""
    a, b = Tensor._lift(a), Tensor._lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def vjp(g):
        return (g @ b.data.T, a.data.T @ g)

    return Tensor(out_data, _parents=(a, b), _vjp=vjp)


def exp(x: Tensor) -> Tensor:
    x = Tensor._lift(x)
    out_data = np.exp(x.data)
    return Tensor(out_data, _parents=(x,), _vjp=lambda g: (g * out_data,))


def log(x: Tensor) -> Tensor:
    x = Tensor._lift(x)
    return Tensor(np.log(x.data), _parents=(x,), _vjp=lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    x = Tensor._lift(x)
    out_data = np.sqrt(x.data)
    return Tensor(out_data, _parents=(x,), _vjp=lambda g: (g * 0.5 / out_data,))


def relu(x: Tensor) -> Tensor:
    x = Tensor._lift(x)
    mask = (x.data > 0).astype(x.data.dtype)
    return Tensor(x.data * mask, _parents=(x,), _vjp=lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    x = Tensor._lift(x)
    out_data = 0.5 * (1.0 + np.tanh(0.5 * x.data))  # numerically stable logistic
    return Tensor(out_data, _parents=(x,), _vjp=lambda g: (g * out_data * (1.0 - out_data),))


def softplus(x: Tensor) -> Tensor:
    x = Tensor._lift(x)
    out_data = np.logaddexp(0.0, x.data)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor(out_data, _parents=(x,), _vjp=lambda g: (g * sig,))


def concat(tensors, axis=1) -> Tensor:
    """Concatenate along `axis` (0 or 1)."""
    tensors = [Tensor._lift(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        slices = []
        for i in range(len(tensors)):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offsets[i], offsets[i + 1])
            slices.append(g[tuple(idx)])
        return tuple(slices)

    return Tensor(out_data, _parents=tuple(tensors), _vjp=vjp)


def take_rows(x: Tensor, indices) -> Tensor:
    """Gather rows by integer index; the adjoint scatter-adds."""
    x = Tensor._lift(x)
    indices = np.asarray(indices, dtype=np.int64)
    out_data = x.data[indices]

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, indices, g)
        return (full,)

    return Tensor(out_data, _parents=(x,), _vjp=vjp)


def row_logsumexp(x: Tensor) -> Tensor:
    """Row-wise log-sum-exp of a 2-d tensor, returned as (n, 1).

    The row max is treated as a constant shift, which leaves the gradient
    exact while keeping the exponentials bounded.
    """
    x = Tensor._lift(x)
    m = x.data.max(axis=1, keepdims=True)
    shifted = exp(x - Tensor(m))
    return log(shifted.sum(axis=1, keepdims=True)) + Tensor(m)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over rows of the squared-norm row difference."""
    d = a - Tensor._lift(b)
    return (d * d).sum(axis=1).mean()


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _toposort(root: Tensor) -> list:
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params) -> list:
    """Differentiate a scalar `loss` with respect to each tensor in `params`.

    Returns one array per parameter, in order; parameters unreachable from
    the loss get zeros. Gradients also accumulate into each leaf's ``.grad``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = list(params)
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()
