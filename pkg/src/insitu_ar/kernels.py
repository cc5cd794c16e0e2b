"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``INSITU_AR_PURE=1`` to force the numpy fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("INSITU_AR_PURE", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def _vec(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def batch_gradient(coeffs, X, y, scale):
    return _impl.batch_gradient(_vec(coeffs), _vec(X), _vec(y), float(scale))


def gd_step(coeffs, X, y, lr, scale):
    return _impl.gd_step(_vec(coeffs), _vec(X), _vec(y), float(lr), float(scale))


def predict_many(coeffs, X):
    return _impl.predict_many(_vec(coeffs), _vec(X))


def forward_many(coeffs, seeds, steps):
    return _impl.forward_many(_vec(coeffs), _vec(seeds), int(steps))


def scan_extrema(iterations, values):
    return _impl.scan_extrema(_vec(iterations), _vec(values))
