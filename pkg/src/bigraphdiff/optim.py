"""Named trainable parameters and the Adam optimizer."""

import numpy as np

from . import kernels
from .autodiff import Tensor
from .errors import ShapeError


class Parameter:
    """A named trainable tensor plus its two Adam moment buffers."""

    __slots__ = ("name", "tensor", "m", "v")

    def __init__(self, name, data):
        self.name = name
        self.tensor = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)

    @property
    def data(self):
        return self.tensor.data


class ParameterStore:
    """Ordered collection of uniquely named Parameters."""

    def __init__(self):
        self._params = {}

    def add(self, name, data):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        self._params[name] = Parameter(name, data)
        return self._params[name]

    def __getitem__(self, name):
        return self._params[name].tensor

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def count(self):
        return sum(p.data.size for p in self)

    def state_arrays(self):
        """name -> (values, m, v), shared (not copied)."""
        return {p.name: (p.tensor.data, p.m, p.v) for p in self}


def gradients(loss, params):
    """Backprop from a scalar loss; returns name -> gradient array.

    Parameters the loss does not depend on get zero gradients.
    """
    if loss.data.shape != ():
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    for p in params:
        p.tensor.grad = None
    loss.backward()
    out = {}
    for p in params:
        g = p.tensor.grad
        out[p.name] = np.zeros_like(p.data) if g is None else g
        p.tensor.grad = None
    return out


def adam_step(params, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8, step=1):
    """Bias-corrected Adam update, in place."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    for p in params:
        if p.name not in grads:
            raise KeyError(f"missing gradient for parameter {p.name}")
        kernels.adam_update(p.tensor.data, grads[p.name], p.m, p.v, lr, beta1, beta2, eps, step)
