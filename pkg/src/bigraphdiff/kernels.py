"""Hot numeric kernels with numba-compiled and pure-numpy variants.

The numba path is the default; set BIGRAPHDIFF_DISABLE_NUMBA=1 before
import to force the numpy fallback (useful for debugging and for the
benchmark in benchmarks/bench_kernels.py).  Both paths compute the same
thing in float64; matrix products are deliberately left to BLAS.
"""

import math
import os

import numpy as np

USE_NUMBA = os.environ.get("BIGRAPHDIFF_DISABLE_NUMBA", "0") not in ("1", "true", "yes")

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _gelu_forward_np(x):
    flat = x.ravel()
    out = 0.5 * flat * (1.0 + np.vectorize(math.erf)(flat * _INV_SQRT2))
    return out.reshape(x.shape)


def _gelu_backward_np(x, g):
    flat = x.ravel()
    cdf = 0.5 * (1.0 + np.vectorize(math.erf)(flat * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * flat * flat)
    return (g.ravel() * (cdf + flat * pdf)).reshape(x.shape)


def _adam_update_np(p, g, m, v, lr, beta1, beta2, eps, step):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


if USE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _gelu_forward_nb(x):
        out = np.empty_like(x)
        for i in range(x.size):
            xi = x.flat[i]
            out.flat[i] = 0.5 * xi * (1.0 + math.erf(xi * _INV_SQRT2))
        return out

    @njit(cache=True)
    def _gelu_backward_nb(x, g):
        out = np.empty_like(x)
        for i in range(x.size):
            xi = x.flat[i]
            cdf = 0.5 * (1.0 + math.erf(xi * _INV_SQRT2))
            pdf = _INV_SQRT_2PI * math.exp(-0.5 * xi * xi)
            out.flat[i] = g.flat[i] * (cdf + xi * pdf)
        return out

    @njit(cache=True)
    def _adam_update_nb(p, g, m, v, lr, beta1, beta2, eps, step):
        c1 = 1.0 - beta1**step
        c2 = 1.0 - beta2**step
        for i in range(p.size):
            gi = g.flat[i]
            m.flat[i] = beta1 * m.flat[i] + (1.0 - beta1) * gi
            v.flat[i] = beta2 * v.flat[i] + (1.0 - beta2) * gi * gi
            p.flat[i] -= lr * (m.flat[i] / c1) / (math.sqrt(v.flat[i] / c2) + eps)

    def gelu_forward(x):
        return _gelu_forward_nb(np.ascontiguousarray(x))

    def gelu_backward(x, g):
        return _gelu_backward_nb(np.ascontiguousarray(x), np.ascontiguousarray(g))

    def adam_update(p, g, m, v, lr, beta1, beta2, eps, step):
        _adam_update_nb(p, np.ascontiguousarray(g), m, v, lr, beta1, beta2, eps, step)

else:
    gelu_forward = _gelu_forward_np
    gelu_backward = _gelu_backward_np
    adam_update = _adam_update_np
