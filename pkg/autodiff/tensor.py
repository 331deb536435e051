"""
Dense float64 tensors with reverse-mode gradients.

Every operation returns a new Tensor that remembers its parents and a closure
that pushes the output gradient back to them. Calling backward() on a scalar
walks the recorded graph in reverse topological order.

A recorded graph belongs to the thread that built it; tensors themselves can
be handed to other threads once no graph is being recorded through them.
"""
from dataclasses import dataclass

import numpy as np

from helpers import ShapeError


class Tensor:
    """
    A dense multi-dimensional float64 array taking part in reverse-mode
    differentiation.

    Attributes:
        data (numpy.ndarray): Values in row-major order.
        requires_grad (bool): Whether backward() should fill grad.
        grad (numpy.ndarray | None): Same-shape gradient buffer after backward().
    """

    def __init__(self, data, requires_grad=False, _parents=(), _op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = tuple(_parents)
        self._backward = lambda: None
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        """
        Fill grad on every requires_grad tensor reachable from this scalar.

        Gradients of all reachable tensors are reset to zero first, so calling
        backward() twice on the same graph gives the same result instead of
        accumulating.
        """
        if self.data.size != 1 or self.ndim > 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")

        order = _topological_order(self)
        for node in order:
            if node.requires_grad:
                node.grad = np.zeros_like(node.data)

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            # constants produced by an op (negated labels, reshaped ages) carry no grad
            if node.requires_grad:
                node._backward()

    # Elementwise arithmetic, broadcasting like numpy

    def __add__(self, other):
        other = as_tensor(other)
        out = _result(self.data + other.data, (self, other), "+")

        def _backward():
            self._accumulate(_unbroadcast(out.grad, self.shape))
            other._accumulate(_unbroadcast(out.grad, other.shape))

        out._backward = _backward
        return out

    def __mul__(self, other):
        other = as_tensor(other)
        out = _result(self.data * other.data, (self, other), "*")

        def _backward():
            self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
            other._accumulate(_unbroadcast(out.grad * self.data, other.shape))

        out._backward = _backward
        return out

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only constant int/float exponents are supported")
        out = _result(self.data**exponent, (self,), f"**{exponent}")

        def _backward():
            self._accumulate(out.grad * exponent * self.data ** (exponent - 1))

        out._backward = _backward
        return out

    def __neg__(self):
        return self * -1.0

    def __radd__(self, other):
        return self + other

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __rmul__(self, other):
        return self * other

    def abs(self):
        out = _result(np.abs(self.data), (self,), "abs")

        def _backward():
            self._accumulate(out.grad * np.sign(self.data))

        out._backward = _backward
        return out

    def relu(self):
        """max(0, x) with subgradient 0 at x == 0."""
        out = _result(np.maximum(self.data, 0.0), (self,), "relu")

        def _backward():
            self._accumulate(out.grad * (self.data > 0))

        out._backward = _backward
        return out

    # Reductions and reshaping

    def sum(self, axis=None):
        out = _result(self.data.sum(axis=axis), (self,), "sum")

        def _backward():
            grad = out.grad
            if axis is not None:
                grad = np.expand_dims(grad, axis)
            self._accumulate(np.broadcast_to(grad, self.shape))

        out._backward = _backward
        return out

    def mean(self, axis=None):
        count = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis) * (1.0 / count)

    def reshape(self, *shape):
        out = _result(self.data.reshape(*shape), (self,), "reshape")

        def _backward():
            self._accumulate(out.grad.reshape(self.shape))

        out._backward = _backward
        return out

    def __getitem__(self, index):
        out = _result(self.data[index], (self,), "getitem")

        def _backward():
            grad = np.zeros_like(self.data)
            np.add.at(grad, index, out.grad)
            self._accumulate(grad)

        out._backward = _backward
        return out


@dataclass
class Parameter:
    """A named trainable tensor; names are unique within a model."""

    name: str
    tensor: Tensor

    def __post_init__(self):
        self.tensor.requires_grad = True

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad


def as_tensor(value):
    """Wrap constants as non-differentiable tensors, pass tensors through."""
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data, parents, op):
    requires_grad = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires_grad, _parents=parents if requires_grad else (), _op=op)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _topological_order(root):
    # Iterative DFS; deep networks would exceed the recursion limit
    order = []
    visited = set()
    stack_ = [(root, False)]
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
            if id(parent) not in visited:
                stack_.append((parent, False))
    return order
