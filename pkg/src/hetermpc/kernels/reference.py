"""NumPy implementations of the fused numeric kernels.

This module is the semantic contract for the backends: the compiled
extension in ``_core.pyx`` implements the same formulas and must agree
with these functions to float rounding. All functions take C-contiguous
float32 or float64 arrays and return arrays of the same dtype.
"""

import numpy as np

BACKEND_NAME = "python"

# tanh-approximation GELU constants
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def layer_norm_fwd(x, gain, bias, eps):
    """Row-wise layer norm of x (n, d). Returns (y, mean, rstd)."""
    dt = x.dtype.type
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = dt(1.0) / np.sqrt(var + dt(eps))
    xhat = (x - mean[:, None]) * rstd[:, None]
    y = xhat * gain + bias
    return y, mean, rstd


def layer_norm_bwd(dy, x, gain, mean, rstd):
    """Backward of layer_norm_fwd. Returns (dx, dgain, dbias)."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    dxhat = dy * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[:, None]
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    return dx, dgain, dbias


def softmax_fwd(x):
    """Row-wise stable softmax of x (n, m)."""
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(dy, y):
    """Backward of softmax_fwd given the forward output y."""
    s = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - s)


def gelu_fwd(x):
    """Elementwise GELU (tanh approximation) of a 1-d array."""
    dt = x.dtype.type
    u = dt(_GELU_C) * (x + dt(_GELU_A) * x * x * x)
    return dt(0.5) * x * (dt(1.0) + np.tanh(u))


def gelu_bwd(dy, x):
    """Backward of gelu_fwd."""
    dt = x.dtype.type
    u = dt(_GELU_C) * (x + dt(_GELU_A) * x * x * x)
    t = np.tanh(u)
    du = dt(_GELU_C) * (dt(1.0) + dt(3.0 * _GELU_A) * x * x)
    return dy * (dt(0.5) * (dt(1.0) + t) + dt(0.5) * x * (dt(1.0) - t * t) * du)


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, weight_decay, step):
    """Decoupled-weight-decay Adam step, in place on flat arrays.

    p *= 1 - lr*wd; then the bias-corrected Adam update with moments m, v.
    ``step`` is the 1-based update count.
    """
    dt = p.dtype.type
    p *= dt(1.0 - lr * weight_decay)
    m *= dt(beta1)
    m += dt(1.0 - beta1) * g
    v *= dt(beta2)
    v += dt(1.0 - beta2) * g * g
    mhat = m / dt(1.0 - beta1**step)
    vhat = v / dt(1.0 - beta2**step)
    p -= dt(lr) * mhat / (np.sqrt(vhat) + dt(eps))
