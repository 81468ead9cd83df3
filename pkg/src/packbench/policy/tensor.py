"""Minimal dense reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps a float64 array and, while gradients are enabled,
records the operation that produced it. :meth:`Tensor.backward` walks the
recorded graph in reverse topological order and accumulates ``grad`` on every
tensor that requires it. Only the operations the packing network needs are
provided; batched operands of up to three dimensions broadcast like numpy.
"""

from __future__ import annotations

import contextvars
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from packbench.errors import DomainError


Array = NDArray[np.float64]
Backward = Callable[[Array], Sequence[Array | None]]

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (rollouts, evaluation)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array that participates in a recorded computation graph."""

    __slots__ = ("_backward", "_parents", "data", "grad", "requires_grad")
    __array_priority__ = 1000

    def __init__(self, data: ArrayLike, requires_grad: bool = False) -> None:
        """Wrap an array.

        Args:
            data: Values; converted to float64.
            requires_grad: Whether ``backward`` should accumulate a gradient here.
        """
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Backward | None = None

    @classmethod
    def _from_op(cls, data: Array, parents: tuple[Tensor, ...], backward: Backward) -> Tensor:
        out = cls(data)
        if _grad_enabled.get() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape of the wrapped array."""
        return self.data.shape

    @property
    def ndim(self) -> int:
        """Number of dimensions."""
        return self.data.ndim

    def numpy(self) -> Array:
        """Return the wrapped array (not a copy)."""
        return self.data

    def item(self) -> float:
        """Return the value of a single-element tensor."""
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        """Return a graph-free tensor sharing the same values."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        """Drop the accumulated gradient."""
        self.grad = None

    def backward(self, grad: ArrayLike | None = None) -> None:
        """Back-propagate from this tensor through the recorded graph.

        Args:
            grad: Seed gradient; defaults to 1 for single-element tensors.

        Raises:
            DomainError: If no seed is given for a non-scalar tensor.
        """
        if grad is None:
            if self.data.size != 1:
                raise DomainError(f"backward() on shape {self.shape} needs an explicit seed gradient")
            seed = np.ones_like(self.data)
        else:
            seed = np.broadcast_to(np.asarray(grad, dtype=np.float64), self.shape).copy()

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = seed if self.grad is None else self.grad + seed
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, parent_grad in zip(node._parents, node._backward(node.grad), strict=True):
                if parent_grad is None or not parent.requires_grad:
                    continue
                parent_grad = _unbroadcast(parent_grad, parent.shape)
                parent.grad = parent_grad if parent.grad is None else parent.grad + parent_grad
            node.grad = None

    def __add__(self, other: Any) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other: Any) -> Tensor:
        return add(other, neg(self))

    def __mul__(self, other: Any) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: Any) -> Tensor:
        return div(self, other)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Any) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, index: Any) -> Tensor:
        return getitem(self, index)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(value: Any) -> Tensor:
    """Wrap constants; tensors pass through unchanged.

    Args:
        value: Tensor, array or scalar.

    Returns:
        Tensor view of the value.
    """
    return value if isinstance(value, Tensor) else Tensor(value)


def add(a: Any, b: Any) -> Tensor:
    """Broadcasting element-wise sum."""
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g))


def neg(a: Tensor) -> Tensor:
    """Element-wise negation."""
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def mul(a: Any, b: Any) -> Tensor:
    """Broadcasting element-wise product."""
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a: Any, b: Any) -> Tensor:
    """Broadcasting element-wise quotient."""
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(
        a.data / b.data,
        (a, b),
        lambda g: (g / b.data, -g * a.data / (b.data * b.data)),
    )


def matmul(a: Any, b: Any) -> Tensor:
    """Batched matrix product; a 2-D right operand is shared across the batch."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g: Array) -> tuple[Array, Array]:
        return (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g)

    return Tensor._from_op(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    return Tensor._from_op(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reshape without copying values."""
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a: Tensor, index: Any) -> Tensor:
    """Basic or integer-array indexing."""

    def backward(g: Array) -> tuple[Array]:
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op(a.data[index], (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along an axis."""
    parts = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g: Array) -> list[Array]:
        return np.split(g, bounds, axis=axis)

    return Tensor._from_op(np.concatenate([t.data for t in parts], axis=axis), parts, backward)


def total(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    """Sum over axes."""

    def backward(g: Array) -> tuple[Array]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    """Arithmetic mean over axes."""
    summed = total(a, axis=axis, keepdims=keepdims)
    count = a.data.size // max(summed.data.size, 1)
    return summed * (1.0 / count)


def exp(a: Tensor) -> Tensor:
    """Element-wise exponential."""
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    """Element-wise natural logarithm."""
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    """LeakyReLU with the given negative slope."""
    factor = np.where(a.data > 0, 1.0, slope)
    return Tensor._from_op(a.data * factor, (a,), lambda g: (g * factor,))


def where(condition: NDArray[np.bool_], a: Tensor, fill: float) -> Tensor:
    """Keep ``a`` where ``condition`` holds, else a constant; no gradient reaches filled entries."""
    condition = np.broadcast_to(condition, a.shape)
    return Tensor._from_op(np.where(condition, a.data, fill), (a,), lambda g: (np.where(condition, g, 0.0),))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise minimum; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    return Tensor._from_op(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (np.where(pick_a, g, 0.0), np.where(pick_a, 0.0, g)),
    )


def clip(a: Tensor, low: float, high: float) -> Tensor:
    """Clamp values to ``[low, high]``; the gradient passes inside the closed interval."""
    inside = (a.data >= low) & (a.data <= high)
    return Tensor._from_op(np.clip(a.data, low, high), (a,), lambda g: (np.where(inside, g, 0.0),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: Array) -> tuple[Array]:
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable log-softmax."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g: Array) -> tuple[Array]:
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then scale and shift."""
    width = x.shape[-1]
    centred = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std

    def backward(g: Array) -> tuple[Array, Array, Array]:
        dxhat = g * gamma.data
        dx = (
            inv_std
            / width
            * (
                width * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
        )
        return (dx, g * xhat, g)

    return Tensor._from_op(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float) -> Array:
    """Draw an orthogonal (semi-orthogonal for non-square) weight matrix.

    Args:
        rng: Random generator.
        shape: ``(fan_in, fan_out)``.
        gain: Scale applied to the orthogonal matrix.

    Returns:
        Weight matrix.
    """
    rows, cols = shape
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]
