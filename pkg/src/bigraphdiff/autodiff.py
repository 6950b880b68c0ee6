"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array and, when gradients are enabled, records the
operation that produced it on a per-forward-pass tape (its parents plus a
backward closure).  Calling ``backward()`` on a scalar walks the recorded
graph in reverse topological order.  The tape lives only as long as the
output Tensors; there is no global graph state.
"""

from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (used for sampling/eval)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def backward(self):
        if self.data.shape != ():
            raise ShapeError(f"backward() needs a scalar, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for p, g in zip(node._parents, grads):
                if not p.requires_grad or g is None:
                    continue
                g = _unbroadcast(np.asarray(g, dtype=np.float64), p.data.shape)
                if p.grad is None:
                    p.grad = g.copy() if g.base is not None else g
                else:
                    p.grad = p.grad + g

    # -- elementwise arithmetic ---------------------------------------------

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        other = Tensor._lift(other)
        return Tensor._result(
            self.data + other.data, (self, other), lambda g: (g, g)
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor._result(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = Tensor._lift(other)
        return Tensor._result(
            self.data - other.data, (self, other), lambda g: (g, -g)
        )

    def __rsub__(self, other):
        return Tensor._lift(other) - self

    def __mul__(self, other):
        other = Tensor._lift(other)
        return Tensor._result(
            self.data * other.data,
            (self, other),
            lambda g: (g * other.data, g * self.data),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)
        return Tensor._result(
            self.data / other.data,
            (self, other),
            lambda g: (g / other.data, -g * self.data / (other.data * other.data)),
        )

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        return Tensor._result(
            self.data**exponent,
            (self,),
            lambda g: (g * exponent * self.data ** (exponent - 1),),
        )

    def exp(self):
        out_data = np.exp(self.data)
        return Tensor._result(out_data, (self,), lambda g: (g * out_data,))

    def log(self):
        return Tensor._result(np.log(self.data), (self,), lambda g: (g / self.data,))

    def sqrt(self):
        out_data = np.sqrt(self.data)
        return Tensor._result(out_data, (self,), lambda g: (g / (2.0 * out_data),))

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, self.data.shape),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, self.data.shape),)

        return Tensor._result(out_data, (self,), backward)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            count = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- shape manipulation --------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Tensor._result(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(self.data.shape),)
        )

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = np.argsort(axes)
        return Tensor._result(
            np.transpose(self.data, axes), (self,), lambda g: (np.transpose(g, inverse),)
        )

    def swapaxes(self, a, b):
        return Tensor._result(
            np.swapaxes(self.data, a, b), (self,), lambda g: (np.swapaxes(g, a, b),)
        )

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def narrow(self, axis, start, length):
        """Contiguous slice [start, start+length) along one axis."""
        index = [slice(None)] * self.data.ndim
        index[axis] = slice(start, start + length)
        index = tuple(index)

        def backward(g):
            full = np.zeros_like(self.data)
            full[index] = g
            return (full,)

        return Tensor._result(self.data[index], (self,), backward)

    # -- linear algebra --------------------------------------------------------

    def __matmul__(self, other):
        other = Tensor._lift(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        return Tensor._result(
            a @ b,
            (self, other),
            lambda g: (g @ np.swapaxes(b, -1, -2), np.swapaxes(a, -1, -2) @ g),
        )


def concat(tensors, axis=0):
    """Concatenate along an existing axis; gradients route back by slicing."""
    tensors = [Tensor._lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def backward(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return Tensor._result(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward
    )


def stack(tensors, axis=0):
    return concat([t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis)


def softmax(x, axis):
    """Numerically stable softmax along one axis."""
    x = Tensor._lift(x)
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return ((g - inner) * out_data,)

    return Tensor._result(out_data, (x,), backward)


def gelu(x):
    """Exact-Gaussian GELU, x * Phi(x)."""
    x = Tensor._lift(x)
    return Tensor._result(
        kernels.gelu_forward(x.data),
        (x,),
        lambda g: (kernels.gelu_backward(x.data, g),),
    )


def layer_norm(x, gamma, beta, eps=1e-5):
    """Standardize the last axis, then scale and shift."""
    x = Tensor._lift(x)
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normed = centered / (var + eps).sqrt()
    return normed * gamma + beta


def affine(x, weight, bias):
    """y = x @ W + b along the last axis; leading axes are batch."""
    x = Tensor._lift(x)
    if x.shape[-1] != weight.shape[-2]:
        raise ShapeError(
            f"affine: input width {x.shape[-1]} does not match weight {weight.shape}"
        )
    if x.ndim == 1:
        return (x.reshape(1, -1) @ weight).reshape(-1) + bias
    return x @ weight + bias
