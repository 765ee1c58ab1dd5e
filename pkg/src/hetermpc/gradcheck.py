"""Finite-difference validation of tape gradients."""

from __future__ import annotations

import numpy as np

from .tape import ComputationTape, Tensor


def finite_diff_check(f, x: Tensor, h: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map a Tensor to a scalar Tensor deterministically; two plain
    forward passes are compared bit-for-bit to detect nondeterminism. Returns
    max over coordinates of |analytic - numeric| / (|analytic| + |numeric| + 1e-8).
    """
    y0 = f(x).data.copy()
    y1 = f(x).data.copy()
    if y0.size != 1:
        raise ValueError(f"finite_diff_check needs a scalar-valued f, got shape {y0.shape}")
    if not np.array_equal(y0, y1):
        raise ValueError("finite_diff_check: f is not deterministic (two forward passes differ)")

    x.requires_grad = True
    x.grad = None
    with ComputationTape() as tape:
        out = f(x)
        tape.backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x).data)
        flat[i] = orig - h
        fm = float(f(x).data)
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * h)

    err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-8)
    return float(err.max())
