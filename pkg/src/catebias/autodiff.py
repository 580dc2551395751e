"""Reverse-mode automatic differentiation over dense numpy arrays.

The engine is deliberately small: a ``Tensor`` wraps a float64 ndarray and
records backward closures while ops build the graph. It supports exactly the
primitives needed to train dense ELU/sigmoid networks with squared-error or
cross-entropy losses plus weight-space penalties (matmul, broadcasting add,
elementwise arithmetic, concatenation, row slicing, reductions).
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit

Array = np.ndarray

# Clamp applied to probabilities before log() in the cross-entropy loss.
BCE_EPS = 1e-7

# When not None, every elu() call appends the sign pattern of its input here.
# Used by the finite-difference checker to detect perturbations that straddle
# the ELU kink at zero.
_ELU_SIGN_TRACE: Optional[list] = None


class UnsupportedPrimitiveError(TypeError):
    """Raised when a loss graph contains something the engine cannot differentiate."""


def _as_array(value) -> Array:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tensor:
    """Node in the computation graph.

    ``data`` is always float64. ``grad`` is populated by ``backward`` and has
    the same shape as ``data``. Leaf tensors created with
    ``requires_grad=True`` act as trainable parameters.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_array(data)
        self.grad: Optional[Array] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Callable[[], None] = _noop
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: Array):
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        """Backpropagate from a scalar output, filling ``grad`` on every parameter."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            node._backward()

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = _node(self.data + other.data, (self, other))

        def backward():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad, other.data.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = _node(-self.data, (self,))

        def backward():
            if self.requires_grad:
                self._accumulate(-out.grad)

        out._backward = backward
        return out

    def __sub__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = _node(self.data - other.data, (self, other))

        def backward():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-out.grad, other.data.shape))

        out._backward = backward
        return out

    def __rsub__(self, other) -> "Tensor":
        return Tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = _node(self.data * other.data, (self, other))

        def backward():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad * self.data, other.data.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = _node(self.data / other.data, (self, other))

        def backward():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad / other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-out.grad * self.data / (other.data ** 2), other.data.shape)
                )

        out._backward = backward
        return out

    def __pow__(self, exponent: float) -> "Tensor":
        if not isinstance(exponent, (int, float)):
            raise UnsupportedPrimitiveError("only scalar exponents are supported")
        out = _node(self.data ** exponent, (self,))

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * exponent * self.data ** (exponent - 1))

        out._backward = backward
        return out

    def __matmul__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = _node(self.data @ other.data, (self, other))

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ out.grad)

        out._backward = backward
        return out

    @property
    def T(self) -> "Tensor":
        out = _node(self.data.T, (self,))

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad.T)

        out._backward = backward
        return out

    # -- reductions and shaping ---------------------------------------------

    def sum(self) -> "Tensor":
        out = _node(np.sum(self.data), (self,))

        def backward():
            if self.requires_grad:
                self._accumulate(np.full_like(self.data, float(out.grad)))

        out._backward = backward
        return out

    def mean(self) -> "Tensor":
        if self.data.size == 0:
            raise ValueError("mean of an empty tensor")
        return self.sum() / float(self.data.size)

    def reshape(self, *shape) -> "Tensor":
        out = _node(self.data.reshape(*shape), (self,))

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad.reshape(self.data.shape))

        out._backward = backward
        return out

    def first_rows(self, count: int) -> "Tensor":
        """View of the leading ``count`` rows; gradient zero-pads the rest."""
        out = _node(self.data[:count], (self,))

        def backward():
            if self.requires_grad:
                g = np.zeros_like(self.data)
                g[:count] = out.grad
                self._accumulate(g)

        out._backward = backward
        return out

    # -- nonlinearities -------------------------------------------------------

    def elu(self) -> "Tensor":
        x = self.data
        if _ELU_SIGN_TRACE is not None:
            _ELU_SIGN_TRACE.append(np.sign(x))
        value = np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
        out = _node(value, (self,))
        local = np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * local)

        out._backward = backward
        return out

    def sigmoid(self) -> "Tensor":
        s = expit(self.data)
        out = _node(s, (self,))

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * s * (1.0 - s))

        out._backward = backward
        return out

    def log(self) -> "Tensor":
        out = _node(np.log(self.data), (self,))

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad / self.data)

        out._backward = backward
        return out

    def clip(self, low: float, high: float) -> "Tensor":
        """Clamp values; gradient passes through only where unclamped."""
        out = _node(np.clip(self.data, low, high), (self,))
        mask = (self.data > low) & (self.data < high)

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * mask)

        out._backward = backward
        return out


def _noop():
    return None


def _node(data: Array, parents: Sequence[Tensor]) -> Tensor:
    out = Tensor(data)
    out._parents = tuple(parents)
    out.requires_grad = any(p.requires_grad for p in parents)
    return out


def _unbroadcast(grad: Array, shape) -> Array:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def concat_columns(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-d tensors along axis 1 (zero-width inputs allowed)."""
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out = _node(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors))
    widths = [t.data.shape[1] for t in tensors]

    def backward():
        offset = 0
        for t, width in zip(tensors, widths):
            if t.requires_grad:
                t._accumulate(out.grad[:, offset:offset + width])
            offset += width

    out._backward = backward
    return out


def loss_mse(pred: Tensor, target) -> Tensor:
    """Mean squared error; 0 iff pred equals target."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.data.shape != target.data.shape:
        raise ValueError(
            f"mse length mismatch: pred {pred.data.shape} vs target {target.data.shape}"
        )
    diff = pred - target
    return (diff * diff).mean()


def loss_bce(pred: Tensor, target) -> Tensor:
    """Binary cross-entropy on probabilities, clamped away from {0, 1}."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.data.shape != target.data.shape:
        raise ValueError(
            f"bce length mismatch: pred {pred.data.shape} vs target {target.data.shape}"
        )
    p = pred.clip(BCE_EPS, 1.0 - BCE_EPS)
    one_minus = (1.0 - target)
    return -(target * p.log() + one_minus * (1.0 - p).log()).mean()


def gradients(loss: Tensor, params: Iterable[Tensor]) -> list[Array]:
    """Exact reverse-mode gradients of a scalar loss for every parameter.

    Parameters the loss does not depend on get zero gradients.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


class elu_sign_trace:
    """Context manager capturing the sign pattern of every elu() input."""

    def __enter__(self) -> list:
        global _ELU_SIGN_TRACE
        self._previous = _ELU_SIGN_TRACE
        _ELU_SIGN_TRACE = []
        return _ELU_SIGN_TRACE

    def __exit__(self, *exc):
        global _ELU_SIGN_TRACE
        _ELU_SIGN_TRACE = self._previous
        return False


def elu(x):
    """Exponential linear unit on a plain array: x if x > 0 else exp(x) - 1."""
    arr = _as_array(x)
    return np.where(arr > 0, arr, np.expm1(np.minimum(arr, 0.0)))


def sigmoid(x):
    return expit(_as_array(x))
