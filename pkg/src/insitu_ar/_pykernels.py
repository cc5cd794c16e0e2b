"""Pure numpy implementations of the hot kernels.

Signatures mirror :mod:`insitu_ar._ckernels` exactly; :mod:`insitu_ar.kernels`
picks one at import time.
"""
import numpy as np


def batch_gradient(coeffs, X, y, scale):
    """Return ``(mse, grad)`` of half the mean squared error in scaled space.

    The parameters in scaled space are ``[b0 / scale, b1, ..., bn]``; inputs
    and targets are divided by ``scale``.
    """
    inv = 1.0 / scale
    theta0 = coeffs[0] * inv
    r = theta0 + (X @ coeffs[1:]) * inv - y * inv
    m = r.shape[0]
    grad = np.empty(coeffs.shape[0])
    grad[0] = r.sum() / m
    grad[1:] = (X.T @ r) * (inv / m)
    return float(r @ r) / m, grad


def gd_step(coeffs, X, y, lr, scale):
    loss, grad = batch_gradient(coeffs, X, y, scale)
    out = coeffs.copy()
    out[0] = (coeffs[0] / scale - lr * grad[0]) * scale
    out[1:] -= lr * grad[1:]
    return out, loss


def predict_many(coeffs, X):
    return coeffs[0] + X @ coeffs[1:]


def forward_many(coeffs, seeds, steps):
    seeds = np.asarray(seeds, dtype=np.float64)
    m, n = seeds.shape
    window = seeds.copy()
    out = np.empty((m, steps))
    b0 = coeffs[0]
    b = coeffs[1:]
    for k in range(steps):
        nxt = b0 + window @ b
        out[:, k] = nxt
        if n > 1:
            window[:, 1:] = window[:, :-1].copy()
        window[:, 0] = nxt
    return out


def scan_extrema(iterations, values):
    """Indices and kinds (+1 max, -1 min) of strict 4-window extrema."""
    k = np.diff(values) / np.diff(iterations)
    if k.shape[0] < 3:
        return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.int8)
    k2 = k[1:-1]
    k3 = k[2:]
    is_max = (k2 > 0) & (k3 < 0)
    is_min = (k2 < 0) & (k3 > 0)
    hits = np.flatnonzero(is_max | is_min)
    kinds = np.where(is_max[hits], 1, -1).astype(np.int8)
    return hits + 2, kinds
