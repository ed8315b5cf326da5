"""Kernel backend selection.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``MDLAB_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy implementations are used.  Both produce identical
results.
"""

import os

import numpy as np

from . import _pykernels

_force_python = os.environ.get("MDLAB_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_python:
        raise ImportError("pure-python backend requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"


def _c(a):
    return np.ascontiguousarray(a)


def im2col3x3(x):
    return _impl.im2col3x3(_c(x))


def col2im3x3(dcols, c):
    return _impl.col2im3x3(_c(dcols), c)


def maxpool2x2(x):
    return _impl.maxpool2x2(_c(x))


def maxpool2x2_backward(dout, idx, h, w):
    return _impl.maxpool2x2_backward(_c(dout), _c(idx), h, w)
